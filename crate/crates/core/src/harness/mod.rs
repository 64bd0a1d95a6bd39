//! Experiment orchestration for the four threat models: whitebox and
//! blackbox attacks, each naive or detection-aware, over a roster of
//! DNN / MCDP / PN / PN-ADV models trained with several seeds.
//!
//! The whitebox artifact store is the sole input to blackbox transfer runs;
//! cell failures are recorded but never abort a sweep, and every run is
//! reproducible bit-for-bit from the config file.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{
    self, generate, implied_target, AttackConfig, AttackError, AttackFamily, AttackMode,
    AttackRecord, ClipBox, ModeTag,
};
use crate::datasets::{
    default_means, make_gaussian_classes, make_ring_ood, Dataset, DatasetError, Role, Split,
};
use crate::losses::{train, TrainError};
use crate::metrics::{roc, AttackScore, DetectionReport, MetricsError};
use crate::models::{Classifier, DropoutSpec, Head, ModelError};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::uncertainty::{
    differential_entropy_dirichlet, entropy, mutual_information_dirichlet,
    mutual_information_ensemble, MeasureKind,
};

pub use config::{
    AttackGridConfig, DatasetConfig, EvadeConfig, ExperimentConfig, FitConfig, MeasureMap,
    ModelKind, ModelsConfig, RingConfig, ThreatModel, TrainingConfig,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// The synthetic geometry behind one experiment, derived from the seed.
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    pub ood_train: Dataset,
    pub ood_eval: Dataset,
}

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub data: ExperimentData,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.dataset;
        let means = default_means(d.classes, d.dim, d.cluster_radius);
        let train = make_gaussian_classes(
            d.classes,
            d.dim,
            &means,
            d.sigma,
            d.n_train_per_class,
            derive_seed(cfg.seed, "data-train", 0),
            Split::Train,
        )?;
        let test = make_gaussian_classes(
            d.classes,
            d.dim,
            &means,
            d.sigma,
            d.n_test_per_class,
            derive_seed(cfg.seed, "data-test", 0),
            Split::Test,
        )?;
        // shuffle the test rows so any prefix mixes all classes
        let mut order: Vec<usize> = (0..test.len()).collect();
        let mut state = derive_seed(cfg.seed, "data-test-order", 0);
        for i in (1..order.len()).rev() {
            state = derive_seed(state, "swap", i as u64);
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let test = test.subset(&order);
        let ood_train = make_ring_ood(
            d.dim,
            d.ood_train.radius,
            d.ood_train.thickness,
            d.ood_train.n,
            derive_seed(cfg.seed, "data-ood-train", 0),
            Role::OodTrain,
            Split::Train,
        )?;
        let ood_eval = make_ring_ood(
            d.dim,
            d.ood_eval.radius,
            d.ood_eval.thickness,
            d.ood_eval.n,
            derive_seed(cfg.seed, "data-ood-eval", 0),
            Role::OodEval,
            Split::Test,
        )?;
        Ok(Experiment {
            cfg,
            data: ExperimentData {
                train,
                test,
                ood_train,
                ood_eval,
            },
        })
    }

    fn models_dir(&self) -> PathBuf {
        self.cfg.out_dir.join("models")
    }

    fn artifacts_dir(&self) -> PathBuf {
        self.cfg.out_dir.join("artifacts")
    }

    pub fn model_path(&self, kind: ModelKind, idx: usize) -> PathBuf {
        self.models_dir().join(format!("{kind}_{idx}.bin"))
    }

    /// Distinct networks that must exist on disk (MCDP shares the DNN).
    fn backing_kinds(&self) -> Vec<ModelKind> {
        let mut kinds: Vec<ModelKind> = self
            .cfg
            .models
            .roster
            .iter()
            .map(|k| k.backing())
            .collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// Load every backing network, training and saving the missing ones.
    pub fn ensure_roster(&self) -> Result<Roster> {
        std::fs::create_dir_all(self.models_dir())?;
        let m = &self.cfg.models;
        let jobs: Vec<(ModelKind, usize)> = self
            .backing_kinds()
            .into_iter()
            .flat_map(|k| (0..m.n_seeds).map(move |i| (k, i)))
            .collect();
        let trained: Vec<Result<((ModelKind, usize), Classifier)>> = jobs
            .par_iter()
            .map(|&(kind, idx)| {
                let path = self.model_path(kind, idx);
                if path.exists() {
                    return Ok(((kind, idx), Classifier::load(&path)?));
                }
                let head = match kind {
                    ModelKind::Pn | ModelKind::PnAdv => Head::DirichletExp,
                    _ => Head::Softmax,
                };
                let mut net = Classifier::new(
                    self.data.train.dim(),
                    &m.hidden,
                    self.cfg.dataset.classes,
                    head,
                    m.leak,
                    m.dropout_keep,
                    derive_seed(self.cfg.seed, &format!("model-{kind}"), idx as u64),
                );
                let fit = self.cfg.training.for_kind(kind);
                let train_cfg = fit
                    .to_train_config(derive_seed(self.cfg.seed, &format!("train-{kind}"), idx as u64));
                let ood = match head {
                    Head::Softmax => None,
                    _ => Some(&self.data.ood_train),
                };
                let trace = train(&mut net, &self.data.train, ood, &train_cfg)?;
                net.save(&path)?;
                trace.write_csv(&self.models_dir().join(format!("{kind}_{idx}_trace.csv")))?;
                Ok(((kind, idx), net))
            })
            .collect();
        let mut nets = BTreeMap::new();
        for t in trained {
            let (key, net) = t?;
            nets.insert(key, net);
        }
        Ok(Roster { nets })
    }
}

/// Trained backing networks keyed by `(kind, seed index)`.
pub struct Roster {
    nets: BTreeMap<(ModelKind, usize), Classifier>,
}

impl Roster {
    pub fn net(&self, kind: ModelKind, idx: usize) -> &Classifier {
        &self.nets[&(kind.backing(), idx)]
    }
}

/// One grid point of the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub model: ModelKind,
    pub seed_index: usize,
    /// Source seed for blackbox transfer cells.
    pub transfer_source: Option<usize>,
    pub family: AttackFamily,
    pub mode: ModeTag,
    pub epsilon: f64,
    pub iterations: usize,
}

impl CellKey {
    pub fn file_stem(&self) -> String {
        let scope = if self.transfer_source.is_some() {
            "bb"
        } else {
            "wb"
        };
        let src = self
            .transfer_source
            .map(|s| format!("_from{s}"))
            .unwrap_or_default();
        let eps = format!("{}", self.epsilon).replace('.', "p").replace('-', "m");
        format!(
            "{scope}_{}_s{}{src}_{}_{}_e{eps}_i{}",
            self.model, self.seed_index, self.family, self.mode, self.iterations
        )
    }
}

/// Detection evaluation of one cell: raw scores plus the derived report, or
/// an explicit failure record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultCell {
    pub key: CellKey,
    pub report: Option<DetectionReport>,
    pub failure: Option<String>,
    pub natural_scores: Vec<f64>,
    pub attack_scores: Vec<AttackScore>,
}

impl ResultCell {
    fn from_scores(key: CellKey, naturals: Vec<f64>, attacks: Vec<AttackScore>) -> Self {
        match roc(&naturals, &attacks) {
            Ok(report) => ResultCell {
                key,
                report: Some(report),
                failure: None,
                natural_scores: naturals,
                attack_scores: attacks,
            },
            Err(e) => ResultCell::failed(key, e.to_string()),
        }
    }

    fn failed(key: CellKey, msg: String) -> Self {
        ResultCell {
            key,
            report: None,
            failure: Some(msg),
            natural_scores: Vec::new(),
            attack_scores: Vec::new(),
        }
    }
}

/// Uncertainty of one input under a roster entry's configured measure.
pub fn uncertainty_score(
    exp: &Experiment,
    roster: &Roster,
    kind: ModelKind,
    idx: usize,
    x: &Tensor,
) -> Result<f64> {
    let measure = exp.cfg.models.measures.for_kind(kind);
    let net = roster.net(kind, idx);
    let value = match kind {
        ModelKind::Dnn => match measure {
            MeasureKind::Entropy => entropy(&net.predict_softmax(x, DropoutSpec::Off)?).value,
            other => {
                return Err(HarnessError::Config(format!(
                    "measure {other:?} is undefined for a deterministic dnn"
                )))
            }
        },
        ModelKind::Mcdp => {
            let seed = derive_seed(exp.cfg.seed, "score-ensemble", idx as u64);
            let ens = net.predict_mc_dropout(x, exp.cfg.models.mc_samples, seed)?;
            match measure {
                MeasureKind::Entropy => entropy(ens.expected()).value,
                MeasureKind::MutualInformation => mutual_information_ensemble(&ens).value,
                MeasureKind::DifferentialEntropy => {
                    return Err(HarnessError::Config(
                        "differential entropy is undefined for an ensemble".into(),
                    ))
                }
            }
        }
        ModelKind::Pn | ModelKind::PnAdv => {
            let d = net.predict_prior_network(x)?;
            match measure {
                MeasureKind::Entropy => entropy(&d.predictive()).value,
                MeasureKind::MutualInformation => mutual_information_dirichlet(&d).value,
                MeasureKind::DifferentialEntropy => differential_entropy_dirichlet(&d).value,
            }
        }
    };
    Ok(value)
}

fn target_model<'a>(
    exp: &Experiment,
    roster: &'a Roster,
    kind: ModelKind,
    idx: usize,
) -> attacks::TargetModel<'a> {
    let net = roster.net(kind, idx);
    match kind {
        ModelKind::Dnn => attacks::TargetModel::Softmax(net),
        ModelKind::Mcdp => attacks::TargetModel::McDropout {
            net,
            samples: exp.cfg.models.attack_mc_samples,
            seed: derive_seed(exp.cfg.seed, "attack-ensemble", idx as u64),
        },
        ModelKind::Pn | ModelKind::PnAdv => attacks::TargetModel::Dirichlet(net),
    }
}

/// Clean-input uncertainty of the first `n` test rows under each roster
/// entry; shared by every cell of that entry.
fn natural_scores(
    exp: &Experiment,
    roster: &Roster,
    n: usize,
) -> Result<BTreeMap<(ModelKind, usize), Vec<f64>>> {
    let mut out = BTreeMap::new();
    let take = n.min(exp.data.test.len());
    for &kind in &exp.cfg.models.roster {
        for idx in 0..exp.cfg.models.n_seeds {
            let scores: Vec<f64> = (0..take)
                .map(|i| uncertainty_score(exp, roster, kind, idx, &exp.data.test.row_tensor(i)))
                .collect::<Result<_>>()?;
            out.insert((kind, idx), scores);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArtifactEntry {
    key: CellKey,
    stem: String,
}

fn write_artifact_index(path: &Path, entries: &[ArtifactEntry]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(entries)?)?;
    Ok(())
}

fn read_artifact_index(path: &Path) -> Result<Vec<ArtifactEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Generate attacks for one cell and score them on the generating model.
fn run_one_cell(
    exp: &Experiment,
    roster: &Roster,
    key: &CellKey,
    mode: AttackMode,
    n_eval: usize,
) -> Result<(Vec<AttackRecord>, Vec<AttackScore>)> {
    let model = target_model(exp, roster, key.model, key.seed_index);
    let dim = exp.data.test.dim();
    let take = n_eval.min(exp.data.test.len());
    let cfg = AttackConfig {
        family: key.family,
        epsilon: key.epsilon,
        iterations: key.iterations,
        step_size: None,
        momentum_decay: 1.0,
        mode,
        clip: ClipBox::unit(dim),
    };
    let mut records = Vec::with_capacity(take);
    let mut scores = Vec::with_capacity(take);
    for i in 0..take {
        let x = exp.data.test.row_tensor(i);
        let outcome = generate(&model, &x, &cfg)?;
        let score =
            uncertainty_score(exp, roster, key.model, key.seed_index, outcome.perturbed())?;
        scores.push(AttackScore {
            uncertainty: score,
            success: outcome.success(),
        });
        records.push(AttackRecord {
            index: i,
            target_class: implied_target(&model, &x, mode)?,
            clean: x,
            outcome,
            family: key.family,
            mode: key.mode,
            epsilon: key.epsilon,
            iterations: key.iterations,
        });
    }
    Ok((records, scores))
}

/// Whitebox sweep: untargeted attacks generated and evaluated on the same
/// model seed, over the full family x epsilon grid.
pub fn run_whitebox(exp: &Experiment, roster: &Roster) -> Result<Vec<ResultCell>> {
    std::fs::create_dir_all(exp.artifacts_dir())?;
    let naturals = natural_scores(exp, roster, exp.cfg.attacks.n_eval)?;
    let mut keys = Vec::new();
    for &kind in &exp.cfg.models.roster {
        for idx in 0..exp.cfg.models.n_seeds {
            for &family in &exp.cfg.attacks.families {
                for &eps in &exp.cfg.attacks.epsilons {
                    keys.push(CellKey {
                        model: kind,
                        seed_index: idx,
                        transfer_source: None,
                        family,
                        mode: ModeTag::Untargeted,
                        epsilon: eps,
                        iterations: exp.cfg.attacks.iterations,
                    });
                }
            }
        }
    }
    let cells_and_entries: Vec<(ResultCell, Option<ArtifactEntry>)> = keys
        .par_iter()
        .map(|key| {
            match run_one_cell(exp, roster, key, AttackMode::Untargeted, exp.cfg.attacks.n_eval)
            {
                Ok((records, scores)) => {
                    let stem = key.file_stem();
                    if let Err(e) =
                        attacks::write_artifacts(&exp.artifacts_dir().join(&stem), &records)
                    {
                        return (ResultCell::failed(key.clone(), e.to_string()), None);
                    }
                    let nat = naturals[&(key.model, key.seed_index)].clone();
                    (
                        ResultCell::from_scores(key.clone(), nat, scores),
                        Some(ArtifactEntry {
                            key: key.clone(),
                            stem,
                        }),
                    )
                }
                Err(e) => (ResultCell::failed(key.clone(), e.to_string()), None),
            }
        })
        .collect();
    let mut cells = Vec::with_capacity(cells_and_entries.len());
    let mut entries = Vec::new();
    for (cell, entry) in cells_and_entries {
        cells.push(cell);
        entries.extend(entry);
    }
    write_artifact_index(&exp.artifacts_dir().join("index_whitebox.json"), &entries)?;
    Ok(cells)
}

/// Detection-evading sweep: MIM attacks on the permuted-target KL losses at
/// a fixed perturbation, over the iteration grid.
pub fn run_detection_evading(exp: &Experiment, roster: &Roster) -> Result<Vec<ResultCell>> {
    std::fs::create_dir_all(exp.artifacts_dir())?;
    let naturals = natural_scores(exp, roster, exp.cfg.evade.n_eval)?;
    let mut keys = Vec::new();
    for &kind in &exp.cfg.models.roster {
        for idx in 0..exp.cfg.models.n_seeds {
            for &iters in &exp.cfg.evade.iterations {
                keys.push(CellKey {
                    model: kind,
                    seed_index: idx,
                    transfer_source: None,
                    family: AttackFamily::Mim,
                    mode: ModeTag::Evade,
                    epsilon: exp.cfg.evade.epsilon,
                    iterations: iters,
                });
            }
        }
    }
    let cells_and_entries: Vec<(ResultCell, Option<ArtifactEntry>)> = keys
        .par_iter()
        .map(|key| {
            match run_one_cell(
                exp,
                roster,
                key,
                AttackMode::EvadeDetection,
                exp.cfg.evade.n_eval,
            ) {
                Ok((records, scores)) => {
                    let stem = key.file_stem();
                    if let Err(e) =
                        attacks::write_artifacts(&exp.artifacts_dir().join(&stem), &records)
                    {
                        return (ResultCell::failed(key.clone(), e.to_string()), None);
                    }
                    let nat = naturals[&(key.model, key.seed_index)].clone();
                    (
                        ResultCell::from_scores(key.clone(), nat, scores),
                        Some(ArtifactEntry {
                            key: key.clone(),
                            stem,
                        }),
                    )
                }
                Err(e) => (ResultCell::failed(key.clone(), e.to_string()), None),
            }
        })
        .collect();
    let mut cells = Vec::with_capacity(cells_and_entries.len());
    let mut entries = Vec::new();
    for (cell, entry) in cells_and_entries {
        cells.push(cell);
        entries.extend(entry);
    }
    write_artifact_index(&exp.artifacts_dir().join("index_evade.json"), &entries)?;
    Ok(cells)
}

/// Evaluate one stored artifact set against a (possibly different) seed of
/// the same model kind.
fn transfer_cell(
    exp: &Experiment,
    roster: &Roster,
    entry: &ArtifactEntry,
    target_idx: usize,
    naturals: &BTreeMap<(ModelKind, usize), Vec<f64>>,
) -> ResultCell {
    let key = CellKey {
        seed_index: target_idx,
        transfer_source: Some(entry.key.seed_index),
        ..entry.key.clone()
    };
    let records = match attacks::read_artifacts(&exp.artifacts_dir().join(&entry.stem)) {
        Ok(r) => r,
        Err(e) => return ResultCell::failed(key, e.to_string()),
    };
    let kind = key.model;
    let model = target_model(exp, roster, kind, target_idx);
    let mut scores = Vec::with_capacity(records.len());
    for r in &records {
        let judged = match r.mode {
            ModeTag::Untargeted => {
                attacks::success_predicate(&model, &r.clean, r.outcome.perturbed(), AttackMode::Untargeted)
            }
            ModeTag::Targeted | ModeTag::Evade => match r.target_class {
                Some(t) => model
                    .predict(r.outcome.perturbed())
                    .map(|p| p.argmax() == t)
                    .map_err(AttackError::from),
                None => Ok(false),
            },
        };
        let success = match judged {
            Ok(s) => s,
            Err(e) => return ResultCell::failed(key.clone(), e.to_string()),
        };
        let score =
            match uncertainty_score(exp, roster, kind, target_idx, r.outcome.perturbed()) {
                Ok(s) => s,
                Err(e) => return ResultCell::failed(key.clone(), e.to_string()),
            };
        scores.push(AttackScore {
            uncertainty: score,
            success,
        });
    }
    let nat = naturals[&(kind, target_idx)].clone();
    ResultCell::from_scores(key, nat, scores)
}

/// Blackbox transfer: every stored whitebox or evading artifact is re-judged
/// and re-scored against every other seed of the same model kind.
pub fn run_blackbox(exp: &Experiment, roster: &Roster) -> Result<Vec<ResultCell>> {
    let mut entries = read_artifact_index(&exp.artifacts_dir().join("index_whitebox.json"))?;
    entries.extend(read_artifact_index(&exp.artifacts_dir().join("index_evade.json"))?);
    if entries.is_empty() {
        return Err(HarnessError::Config(
            "no attack artifacts found; run the whitebox sweep first".into(),
        ));
    }
    let n_eval = exp.cfg.attacks.n_eval.max(exp.cfg.evade.n_eval);
    let naturals = natural_scores(exp, roster, n_eval)?;
    let jobs: Vec<(ArtifactEntry, usize)> = entries
        .iter()
        .flat_map(|e| {
            (0..exp.cfg.models.n_seeds)
                .filter(|&t| t != e.key.seed_index)
                .map(move |t| (e.clone(), t))
        })
        .collect();
    Ok(jobs
        .par_iter()
        .map(|(entry, tgt)| transfer_cell(exp, roster, entry, *tgt, &naturals))
        .collect())
}

/// Re-score stored artifacts on their source models (e.g. after changing the
/// configured uncertainty measures) without regenerating attacks.
pub fn evaluate_artifacts(exp: &Experiment, roster: &Roster) -> Result<Vec<ResultCell>> {
    let mut entries = read_artifact_index(&exp.artifacts_dir().join("index_whitebox.json"))?;
    entries.extend(read_artifact_index(&exp.artifacts_dir().join("index_evade.json"))?);
    if entries.is_empty() {
        return Err(HarnessError::Config(
            "no attack artifacts found; run the whitebox sweep first".into(),
        ));
    }
    let n_eval = exp.cfg.attacks.n_eval.max(exp.cfg.evade.n_eval);
    let naturals = natural_scores(exp, roster, n_eval)?;
    Ok(entries
        .par_iter()
        .map(|entry| {
            let mut cell = transfer_cell(exp, roster, entry, entry.key.seed_index, &naturals);
            cell.key.transfer_source = None;
            cell
        })
        .collect())
}

/// Outcome counts of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub cells: usize,
    pub failures: usize,
}

impl RunSummary {
    pub fn of(cells: &[ResultCell]) -> Self {
        RunSummary {
            cells: cells.len(),
            failures: cells.iter().filter(|c| c.failure.is_some()).count(),
        }
    }

    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

/// Train, attack, transfer, evade and report in one deterministic pass.
pub fn run_all(exp: &Experiment) -> Result<(Vec<ResultCell>, RunSummary)> {
    let roster = exp.ensure_roster()?;
    let mut cells = Vec::new();
    if exp.cfg.threat_models.contains(&ThreatModel::Whitebox)
        || exp.cfg.threat_models.contains(&ThreatModel::Blackbox)
    {
        cells.extend(run_whitebox(exp, &roster)?);
    }
    if exp.cfg.threat_models.contains(&ThreatModel::Evade) {
        cells.extend(run_detection_evading(exp, &roster)?);
    }
    if exp.cfg.threat_models.contains(&ThreatModel::Blackbox) {
        cells.extend(run_blackbox(exp, &roster)?);
    }
    report::publish(&exp.cfg.out_dir, &cells)?;
    let summary = RunSummary::of(&cells);
    Ok((cells, summary))
}
