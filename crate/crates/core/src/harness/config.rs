//! Experiment configuration: one TOML file drives the dataset geometry, the
//! model roster, per-kind training, the attack grid and which threat models
//! to run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackFamily;
use crate::losses::{AdversarialTrainConfig, Schedule, TargetDirichletSpec, TrainConfig};
use crate::uncertainty::MeasureKind;

use super::HarnessError;

/// The four model roster entries. MCDP shares the trained DNN and differs
/// only in how predictions and uncertainties are computed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dnn,
    Mcdp,
    Pn,
    PnAdv,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Dnn => "dnn",
            ModelKind::Mcdp => "mcdp",
            ModelKind::Pn => "pn",
            ModelKind::PnAdv => "pn_adv",
        }
    }

    /// Which trained network backs this roster entry.
    pub fn backing(&self) -> ModelKind {
        match self {
            ModelKind::Mcdp => ModelKind::Dnn,
            other => *other,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    pub radius: f64,
    pub thickness: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub dim: usize,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub sigma: f64,
    pub cluster_radius: f64,
    pub ood_train: RingConfig,
    pub ood_eval: RingConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 3,
            dim: 2,
            n_train_per_class: 300,
            n_test_per_class: 100,
            sigma: 0.08,
            cluster_radius: 0.5,
            ood_train: RingConfig {
                radius: 0.9,
                thickness: 0.05,
                n: 900,
            },
            ood_eval: RingConfig {
                radius: 0.75,
                thickness: 0.05,
                n: 300,
            },
        }
    }
}

/// Uncertainty measure used for detection, per roster entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureMap {
    pub dnn: MeasureKind,
    pub mcdp: MeasureKind,
    pub pn: MeasureKind,
    pub pn_adv: MeasureKind,
}

impl Default for MeasureMap {
    fn default() -> Self {
        MeasureMap {
            dnn: MeasureKind::Entropy,
            mcdp: MeasureKind::MutualInformation,
            pn: MeasureKind::MutualInformation,
            pn_adv: MeasureKind::MutualInformation,
        }
    }
}

impl MeasureMap {
    pub fn for_kind(&self, kind: ModelKind) -> MeasureKind {
        match kind {
            ModelKind::Dnn => self.dnn,
            ModelKind::Mcdp => self.mcdp,
            ModelKind::Pn => self.pn,
            ModelKind::PnAdv => self.pn_adv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsConfig {
    pub hidden: Vec<usize>,
    pub leak: f64,
    pub dropout_keep: f64,
    pub n_seeds: usize,
    /// MC-dropout members when scoring uncertainty.
    pub mc_samples: usize,
    /// Fixed-seed dropout passes the attacker differentiates through.
    pub attack_mc_samples: usize,
    pub roster: Vec<ModelKind>,
    pub measures: MeasureMap,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            hidden: vec![64, 64],
            leak: 0.2,
            dropout_keep: 0.7,
            n_seeds: 5,
            mc_samples: 100,
            attack_mc_samples: 10,
            roster: vec![
                ModelKind::Dnn,
                ModelKind::Mcdp,
                ModelKind::Pn,
                ModelKind::PnAdv,
            ],
            measures: MeasureMap::default(),
        }
    }
}

/// Training settings for one roster entry; the seed is derived per model
/// instantiation from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub schedule: Schedule,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ood_weight: f64,
    pub adversarial: Option<AdversarialTrainConfig>,
    pub target: TargetDirichletSpec,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            schedule: Schedule::Constant { lr: 0.05 },
            momentum: 0.9,
            batch_size: 32,
            epochs: 120,
            ood_weight: 0.0,
            adversarial: None,
            target: TargetDirichletSpec::default(),
        }
    }
}

impl FitConfig {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            ood_weight: self.ood_weight,
            adversarial: self.adversarial,
            target: self.target,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub dnn: FitConfig,
    pub pn: FitConfig,
    pub pn_adv: FitConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let pn = FitConfig {
            schedule: Schedule::Constant { lr: 0.01 },
            epochs: 150,
            ood_weight: 1.0,
            ..FitConfig::default()
        };
        TrainingConfig {
            dnn: FitConfig::default(),
            pn: pn.clone(),
            pn_adv: FitConfig {
                adversarial: Some(AdversarialTrainConfig::default()),
                ..pn
            },
        }
    }
}

impl TrainingConfig {
    pub fn for_kind(&self, kind: ModelKind) -> &FitConfig {
        match kind.backing() {
            ModelKind::Pn => &self.pn,
            ModelKind::PnAdv => &self.pn_adv,
            _ => &self.dnn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackGridConfig {
    pub families: Vec<AttackFamily>,
    pub epsilons: Vec<f64>,
    pub iterations: usize,
    /// How many test inputs each cell attacks (deterministic prefix).
    pub n_eval: usize,
}

impl Default for AttackGridConfig {
    fn default() -> Self {
        AttackGridConfig {
            families: vec![AttackFamily::Fgsm, AttackFamily::Bim, AttackFamily::Mim],
            epsilons: vec![0.02, 0.05, 0.1, 0.2, 0.4],
            iterations: 10,
            n_eval: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvadeConfig {
    pub epsilon: f64,
    pub iterations: Vec<usize>,
    pub n_eval: usize,
}

impl Default for EvadeConfig {
    fn default() -> Self {
        EvadeConfig {
            epsilon: 0.4,
            iterations: vec![10, 25, 50, 100],
            n_eval: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatModel {
    Whitebox,
    Blackbox,
    Evade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub models: ModelsConfig,
    pub training: TrainingConfig,
    pub attacks: AttackGridConfig,
    pub evade: EvadeConfig,
    pub threat_models: Vec<ThreatModel>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            models: ModelsConfig::default(),
            training: TrainingConfig::default(),
            attacks: AttackGridConfig::default(),
            evade: EvadeConfig::default(),
            threat_models: vec![
                ThreatModel::Whitebox,
                ThreatModel::Blackbox,
                ThreatModel::Evade,
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.models.n_seeds == 0 {
            return bad("n_seeds must be >= 1".into());
        }
        if self.models.roster.is_empty() {
            return bad("empty model roster".into());
        }
        if self.models.roster.contains(&ModelKind::Mcdp)
            && !self.models.roster.contains(&ModelKind::Dnn)
        {
            return bad("mcdp derives from the dnn; add dnn to the roster".into());
        }
        let eps = &self.attacks.epsilons;
        if eps.is_empty() || eps.iter().any(|&e| e < 0.0) || eps.windows(2).any(|w| w[0] > w[1])
        {
            return bad("epsilon grid must be nonnegative and ascending".into());
        }
        if self.attacks.families.is_empty() {
            return bad("attack family list is empty".into());
        }
        if self.attacks.iterations == 0 || self.attacks.n_eval == 0 {
            return bad("attack iterations and n_eval must be >= 1".into());
        }
        if self.evade.iterations.is_empty() || self.evade.n_eval == 0 {
            return bad("evade iteration grid and n_eval must be nonempty".into());
        }
        if !(self.models.dropout_keep > 0.0 && self.models.dropout_keep <= 1.0) {
            return bad("dropout_keep must lie in (0, 1]".into());
        }
        if self.models.roster.contains(&ModelKind::Mcdp)
            && (self.models.mc_samples == 0 || self.models.attack_mc_samples == 0)
        {
            return bad("mcdp needs mc_samples and attack_mc_samples >= 1".into());
        }
        Ok(())
    }
}
