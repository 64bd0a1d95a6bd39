//! L∞ attack generation: single-step FGSM, iterative BIM and
//! momentum-iterative MIM, each in untargeted, targeted or detection-evading
//! mode. The generation process either yields an adversarial input (the
//! prediction changed as intended) or the explicit failure marker; the final
//! iterate is kept either way so detectors can score failed attempts.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Node};
use crate::losses::{dirichlet_kl_node, TrainError};
use crate::models::{
    CategoricalDist, Classifier, DirichletParams, DropoutSpec, ModelError,
};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

const ARTIFACT_MAGIC: &[u8; 8] = b"ADVATTK1";

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite input gradient during attack generation")]
    NonFiniteGradient,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] TrainError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("corrupt attack artifact: {0}")]
    Artifact(String),
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    Fgsm,
    Bim,
    Mim,
}

impl std::fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Bim => "bim",
            AttackFamily::Mim => "mim",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Push the prediction away from the clean argmax.
    Untargeted,
    /// Pull the prediction toward a chosen class.
    Targeted(usize),
    /// Targeted at the second-most-likely clean class while minimizing KL to
    /// a permuted (uncertainty-preserving) target distribution.
    EvadeDetection,
}

/// Per-dimension clipping box for generated inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ClipBox {
    pub fn uniform(lo: f64, hi: f64, dim: usize) -> Self {
        ClipBox {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn unit(dim: usize) -> Self {
        ClipBox::uniform(-1.0, 1.0, dim)
    }

    fn contains(&self, x: &Tensor, slack: f64) -> bool {
        x.data()
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo - slack && v <= hi + slack)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub family: AttackFamily,
    pub epsilon: f64,
    pub iterations: usize,
    /// Per-iteration step; defaults to `epsilon / iterations`.
    pub step_size: Option<f64>,
    /// Momentum decay for MIM.
    pub momentum_decay: f64,
    pub mode: AttackMode,
    pub clip: ClipBox,
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64, mode: AttackMode, clip: ClipBox) -> Self {
        AttackConfig {
            family: AttackFamily::Fgsm,
            epsilon,
            iterations: 1,
            step_size: None,
            momentum_decay: 1.0,
            mode,
            clip,
        }
    }

    pub fn bim(epsilon: f64, iterations: usize, mode: AttackMode, clip: ClipBox) -> Self {
        AttackConfig {
            family: AttackFamily::Bim,
            epsilon,
            iterations,
            step_size: None,
            momentum_decay: 1.0,
            mode,
            clip,
        }
    }

    pub fn mim(epsilon: f64, iterations: usize, mode: AttackMode, clip: ClipBox) -> Self {
        AttackConfig {
            family: AttackFamily::Mim,
            epsilon,
            iterations,
            step_size: None,
            momentum_decay: 1.0,
            mode,
            clip,
        }
    }

    pub fn step(&self) -> f64 {
        self.step_size
            .unwrap_or(self.epsilon / self.iterations.max(1) as f64)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(AttackError::InvalidConfig("negative epsilon".into()));
        }
        if self.iterations == 0 {
            return Err(AttackError::InvalidConfig("iterations must be >= 1".into()));
        }
        if let Some(s) = self.step_size {
            if s <= 0.0 {
                return Err(AttackError::InvalidConfig("step size must be > 0".into()));
            }
        }
        if self.momentum_decay < 0.0 {
            return Err(AttackError::InvalidConfig("negative momentum decay".into()));
        }
        if self.clip.lo.len() != dim
            || self.clip.hi.len() != dim
            || self.clip.lo.iter().zip(&self.clip.hi).any(|(l, h)| l >= h)
        {
            return Err(AttackError::InvalidConfig(format!(
                "clip box malformed for dimension {dim}"
            )));
        }
        Ok(())
    }
}

/// View of a classifier as an attack target; fixes how gradients and clean
/// predictions are obtained for each model family.
pub enum TargetModel<'a> {
    /// Deterministic softmax net (dropout off).
    Softmax(&'a Classifier),
    /// MC-dropout ensemble attacked through the mean of a fixed-seed set of
    /// dropout forward passes, so the objective is deterministic.
    McDropout {
        net: &'a Classifier,
        samples: usize,
        seed: u64,
    },
    /// Prior network attacked through its Dirichlet predictive distribution.
    Dirichlet(&'a Classifier),
}

impl<'a> TargetModel<'a> {
    pub fn classifier(&self) -> &'a Classifier {
        match self {
            TargetModel::Softmax(n) => n,
            TargetModel::McDropout { net, .. } => net,
            TargetModel::Dirichlet(n) => n,
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier().classes()
    }

    /// Deterministic clean prediction consistent with the attacked objective.
    pub fn predict(&self, x: &Tensor) -> Result<CategoricalDist> {
        match self {
            TargetModel::Softmax(net) => Ok(net.predict_softmax(x, DropoutSpec::Off)?),
            TargetModel::McDropout { net, samples, seed } => {
                let members = (0..*samples)
                    .map(|i| {
                        net.predict_softmax(
                            x,
                            DropoutSpec::Seeded(derive_seed(*seed, "attack-mc", i as u64)),
                        )
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(crate::models::EnsemblePrediction::new(members)?
                    .expected()
                    .clone())
            }
            TargetModel::Dirichlet(net) => Ok(net.predict_prior_network(x)?.predictive()),
        }
    }

    /// Probability node of the predictive distribution at `x`.
    fn probs_node<'g>(&self, g: &'g Graph, x: Node<'g>) -> Result<Node<'g>> {
        match self {
            TargetModel::Softmax(net) => {
                Ok(net.logits_node(g, x, DropoutSpec::Off)?.softmax()?)
            }
            TargetModel::McDropout { net, samples, seed } => {
                let mut acc: Option<Node> = None;
                for i in 0..*samples {
                    let spec = DropoutSpec::Seeded(derive_seed(*seed, "attack-mc", i as u64));
                    let p = net.logits_node(g, x, spec)?.softmax()?;
                    acc = Some(match acc {
                        Some(a) => a.add(p)?,
                        None => p,
                    });
                }
                Ok(acc.expect("samples >= 1").scale(1.0 / *samples as f64))
            }
            TargetModel::Dirichlet(_) => {
                // softmax(ln alpha) = alpha_c / alpha0, the Dirichlet
                // predictive, for any strictly positive head output.
                let alpha = self.alpha_node(g, x)?;
                Ok(alpha.log()?.softmax()?)
            }
        }
    }

    fn alpha_node<'g>(&self, g: &'g Graph, x: Node<'g>) -> Result<Node<'g>> {
        let net = self.classifier();
        Ok(net.head_node(net.logits_node(g, x, DropoutSpec::Off)?)?)
    }
}

/// The loss actually minimized by the generation loop, with targets frozen
/// from the clean input before iteration begins.
enum FrozenLoss {
    /// `+ln p(omega)`: drive the original class down.
    Untargeted { omega: usize },
    /// `-ln p(t)`: drive the target class up.
    Targeted { t: usize },
    /// KL from a permuted categorical to the model output.
    EvadeCategorical { target: CategoricalDist },
    /// KL from a permuted Dirichlet to the model concentrations.
    EvadeDirichlet { target: DirichletParams },
}

/// Result of one generation attempt. The final iterate is always retained;
/// `result()` is `None` exactly when the attempt failed.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    perturbed: Tensor,
    success: bool,
    pub iterations_used: usize,
    pub final_loss: f64,
}

impl AttackOutcome {
    fn checked(
        perturbed: Tensor,
        success: bool,
        iterations_used: usize,
        final_loss: f64,
        clean: &Tensor,
        cfg: &AttackConfig,
    ) -> Self {
        assert!(
            perturbed.linf_distance(clean) <= cfg.epsilon + 1e-9,
            "attack left the epsilon ball"
        );
        assert!(
            cfg.clip.contains(&perturbed, 1e-12),
            "attack left the clip box"
        );
        AttackOutcome {
            perturbed,
            success,
            iterations_used,
            final_loss,
        }
    }

    /// Adversarial input, or `None` for the failure marker.
    pub fn result(&self) -> Option<&Tensor> {
        self.success.then_some(&self.perturbed)
    }

    /// Final iterate regardless of success; what a detector gets to score.
    pub fn perturbed(&self) -> &Tensor {
        &self.perturbed
    }

    pub fn success(&self) -> bool {
        self.success
    }

    #[cfg(test)]
    pub(crate) fn synthetic(perturbed: Tensor, success: bool) -> Self {
        AttackOutcome {
            perturbed,
            success,
            iterations_used: 0,
            final_loss: 0.0,
        }
    }
}

/// `+ln p(omega)` with `omega` the clean argmax; minimizing it pushes the
/// original class probability down.
pub fn untargeted_loss<'g>(probs: Node<'g>, omega: usize) -> Result<Node<'g>> {
    Ok(pick_log_prob(probs, omega)?)
}

/// `-ln p(t)`; minimizing it pulls the target class up.
pub fn targeted_loss<'g>(probs: Node<'g>, t: usize) -> Result<Node<'g>> {
    Ok(pick_log_prob(probs, t)?.neg())
}

fn pick_log_prob<'g>(probs: Node<'g>, class: usize) -> Result<Node<'g>> {
    let shape = probs.shape();
    let k = *shape.last().unwrap_or(&0);
    if class >= k {
        return Err(AttackError::InvalidConfig(format!(
            "class {class} out of range for {k} classes"
        )));
    }
    let mut mask = vec![0.0; probs.value().numel()];
    mask[class] = 1.0;
    let mask = probs
        .graph()
        .constant(Tensor::new(shape, mask).expect("sized above"));
    Ok(probs.log()?.mul(mask)?.sum_all())
}

/// Swap the argmax probability with the target class probability.
pub fn permute_categorical_target(p: &CategoricalDist, t: usize) -> CategoricalDist {
    let top = p.argmax();
    let mut probs = p.probs().to_vec();
    probs.swap(top, t);
    CategoricalDist::new(probs).expect("permutation preserves validity")
}

/// Swap the largest concentration with the target class concentration.
pub fn permute_dirichlet_target(d: &DirichletParams, t: usize) -> DirichletParams {
    let mut alpha = d.alpha().to_vec();
    let top = {
        let mut best = 0;
        for i in 1..alpha.len() {
            if alpha[i] > alpha[best] {
                best = i;
            }
        }
        best
    };
    alpha.swap(top, t);
    DirichletParams::new(alpha).expect("permutation preserves positivity")
}

/// `KL(P_t || P(y|x))` for a frozen permuted categorical target.
pub fn evade_loss_categorical<'g>(
    probs: Node<'g>,
    target: &CategoricalDist,
) -> Result<Node<'g>> {
    let shape = probs.shape();
    let tgt = probs
        .graph()
        .constant(Tensor::new(shape, target.probs().to_vec()).expect("same length"));
    // sum_c P_t(c) (ln P_t(c) - ln P(c|x)) ; the constant entropy term keeps
    // the value a true KL (>= 0) rather than just sharing the gradient.
    let const_term: f64 = target
        .probs()
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum();
    let cross = probs.log()?.mul(tgt)?.sum_all().neg();
    Ok(cross.add(probs.graph().scalar(const_term))?)
}

/// `KL(Dir_t || Dir(alpha(x)))` for a frozen permuted Dirichlet target.
pub fn evade_loss_dirichlet<'g>(
    g: &'g Graph,
    alpha: Node<'g>,
    target: &DirichletParams,
) -> Result<Node<'g>> {
    Ok(dirichlet_kl_node(g, target, alpha)?)
}

/// Attacker-side success judgment.
pub fn success_predicate(
    model: &TargetModel,
    x_clean: &Tensor,
    x_adv: &Tensor,
    mode: AttackMode,
) -> Result<bool> {
    let clean = model.predict(x_clean)?;
    let adv = model.predict(x_adv)?;
    Ok(match mode {
        AttackMode::Untargeted => adv.argmax() != clean.argmax(),
        AttackMode::Targeted(t) => {
            if t == clean.argmax() && x_adv == x_clean {
                log::debug!("degenerate targeted success: clean argmax already {t}");
            }
            adv.argmax() == t
        }
        AttackMode::EvadeDetection => adv.argmax() == clean.second_most_likely(),
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn build_loss<'g>(
    model: &TargetModel,
    g: &'g Graph,
    x: Node<'g>,
    frozen: &FrozenLoss,
) -> Result<Node<'g>> {
    match frozen {
        FrozenLoss::Untargeted { omega } => untargeted_loss(model.probs_node(g, x)?, *omega),
        FrozenLoss::Targeted { t } => targeted_loss(model.probs_node(g, x)?, *t),
        FrozenLoss::EvadeCategorical { target } => {
            evade_loss_categorical(model.probs_node(g, x)?, target)
        }
        FrozenLoss::EvadeDirichlet { target } => {
            evade_loss_dirichlet(g, model.alpha_node(g, x)?, target)
        }
    }
}

fn freeze_loss(model: &TargetModel, x: &Tensor, mode: AttackMode) -> Result<FrozenLoss> {
    Ok(match mode {
        AttackMode::Untargeted => FrozenLoss::Untargeted {
            omega: model.predict(x)?.argmax(),
        },
        AttackMode::Targeted(t) => {
            if t >= model.classes() {
                return Err(AttackError::InvalidConfig(format!(
                    "target class {t} out of range"
                )));
            }
            FrozenLoss::Targeted { t }
        }
        AttackMode::EvadeDetection => match model {
            TargetModel::Dirichlet(net) => {
                let d = net.predict_prior_network(x)?;
                let t = d.predictive().second_most_likely();
                FrozenLoss::EvadeDirichlet {
                    target: permute_dirichlet_target(&d, t),
                }
            }
            _ => {
                let p = model.predict(x)?;
                let t = p.second_most_likely();
                FrozenLoss::EvadeCategorical {
                    target: permute_categorical_target(&p, t),
                }
            }
        },
    })
}

/// Target class implied by the mode and the clean input, if any; recorded in
/// artifacts so blackbox transfer can re-judge success.
pub fn implied_target(model: &TargetModel, x: &Tensor, mode: AttackMode) -> Result<Option<usize>> {
    Ok(match mode {
        AttackMode::Untargeted => None,
        AttackMode::Targeted(t) => Some(t),
        AttackMode::EvadeDetection => Some(model.predict(x)?.second_most_likely()),
    })
}

/// Run the generation loop for any family. Deterministic in
/// `(model weights, x, cfg)`.
pub fn generate(model: &TargetModel, x: &Tensor, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let dim = model.classifier().input_dim();
    if x.numel() != dim {
        return Err(AttackError::Model(ModelError::DimensionMismatch {
            expected: dim,
            got: x.numel(),
        }));
    }
    cfg.validate(dim)?;
    if !cfg.clip.contains(x, 1e-12) {
        return Err(AttackError::InvalidConfig(
            "clean input lies outside the clip box".into(),
        ));
    }
    let iterations = match cfg.family {
        AttackFamily::Fgsm => 1,
        _ => cfg.iterations,
    };
    let step = match cfg.family {
        AttackFamily::Fgsm => cfg.epsilon,
        _ => cfg.step(),
    };
    let frozen = freeze_loss(model, x, cfg.mode)?;

    let clean = Tensor::vector(x.data());
    let mut adv = clean.clone();
    let mut momentum = vec![0.0; dim];
    for _ in 0..iterations {
        let g = Graph::new();
        let xn = g.leaf(
            Tensor::new(vec![1, dim], adv.data().to_vec()).expect("sized above"),
            true,
        );
        let loss = build_loss(model, &g, xn, &frozen)?;
        let grads = g.backward(loss)?;
        let gx = grads.wrt(xn);
        if !gx.all_finite() {
            return Err(AttackError::NonFiniteGradient);
        }
        let direction: Vec<f64> = match cfg.family {
            AttackFamily::Mim => {
                let l1: f64 = gx.data().iter().map(|v| v.abs()).sum();
                for (m, &g) in momentum.iter_mut().zip(gx.data()) {
                    if l1 > 0.0 {
                        *m = cfg.momentum_decay * *m + g / l1;
                    } else {
                        *m *= cfg.momentum_decay;
                    }
                }
                momentum.iter().map(|&m| sign(m)).collect()
            }
            _ => gx.data().iter().map(|&g| sign(g)).collect(),
        };
        for ((a, &x0), (d, (&lo, &hi))) in adv
            .data_mut()
            .iter_mut()
            .zip(clean.data())
            .zip(direction.iter().zip(cfg.clip.lo.iter().zip(&cfg.clip.hi)))
        {
            // descend, project into the epsilon ball, clip to the box
            *a = (*a - step * d)
                .clamp(x0 - cfg.epsilon, x0 + cfg.epsilon)
                .clamp(lo, hi);
        }
        debug_assert!(adv.linf_distance(&clean) <= cfg.epsilon + 1e-12);
    }

    // loss and success at the final iterate
    let g = Graph::new();
    let xn = g.constant(Tensor::new(vec![1, dim], adv.data().to_vec()).expect("sized above"));
    let final_loss = build_loss(model, &g, xn, &frozen)?.value().scalar_value();
    let success = success_predicate(model, &clean, &adv, cfg.mode)?;
    Ok(AttackOutcome::checked(
        adv, success, iterations, final_loss, &clean, cfg,
    ))
}

/// Single signed-gradient step of size epsilon.
pub fn fgsm(model: &TargetModel, x: &Tensor, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let mut cfg = cfg.clone();
    cfg.family = AttackFamily::Fgsm;
    cfg.iterations = 1;
    generate(model, x, &cfg)
}

/// Iterative signed steps, re-projected after every step.
pub fn bim(model: &TargetModel, x: &Tensor, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let mut cfg = cfg.clone();
    cfg.family = AttackFamily::Bim;
    generate(model, x, &cfg)
}

/// Momentum-iterative variant with L1-normalized gradient accumulation.
pub fn mim(model: &TargetModel, x: &Tensor, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let mut cfg = cfg.clone();
    cfg.family = AttackFamily::Mim;
    generate(model, x, &cfg)
}

// ---------------------------------------------------------------------------
// Attack artifacts: CSV metadata + binary tensor payload, consumed by the
// metrics pipeline and by blackbox transfer runs.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeTag {
    Untargeted,
    Targeted,
    Evade,
}

impl From<AttackMode> for ModeTag {
    fn from(m: AttackMode) -> Self {
        match m {
            AttackMode::Untargeted => ModeTag::Untargeted,
            AttackMode::Targeted(_) => ModeTag::Targeted,
            AttackMode::EvadeDetection => ModeTag::Evade,
        }
    }
}

impl std::fmt::Display for ModeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModeTag::Untargeted => "untargeted",
            ModeTag::Targeted => "targeted",
            ModeTag::Evade => "evade",
        })
    }
}

/// One generated attack, self-describing enough for transfer evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub index: usize,
    pub clean: Tensor,
    pub outcome: AttackOutcome,
    pub family: AttackFamily,
    pub mode: ModeTag,
    pub epsilon: f64,
    pub iterations: usize,
    pub target_class: Option<usize>,
}

/// Write records as `<base>.csv` (metadata) plus `<base>.bin` (clean and
/// perturbed inputs, little-endian f64).
pub fn write_artifacts(base: &Path, records: &[AttackRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(AttackError::Artifact("no records to write".into()));
    }
    let dim = records[0].clean.numel();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(csv_path(base))?;
    w.write_record([
        "index",
        "family",
        "mode",
        "epsilon",
        "iterations",
        "success",
        "iterations_used",
        "final_loss",
        "target_class",
    ])?;
    let mut bin: Vec<u8> = Vec::with_capacity(16 + records.len() * dim * 16);
    bin.extend_from_slice(ARTIFACT_MAGIC);
    bin.extend_from_slice(&(records.len() as u64).to_le_bytes());
    bin.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        if r.clean.numel() != dim || r.outcome.perturbed().numel() != dim {
            return Err(AttackError::Artifact("inconsistent dimensions".into()));
        }
        w.write_record([
            r.index.to_string(),
            r.family.to_string(),
            r.mode.to_string(),
            format!("{}", r.epsilon),
            r.iterations.to_string(),
            r.outcome.success().to_string(),
            r.outcome.iterations_used.to_string(),
            format!("{}", r.outcome.final_loss),
            r.target_class.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
        for v in r.clean.data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        for v in r.outcome.perturbed().data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.flush()?;
    std::fs::write(bin_path(base), bin)?;
    Ok(())
}

pub fn csv_path(base: &Path) -> PathBuf {
    base.with_extension("csv")
}

pub fn bin_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

pub fn read_artifacts(base: &Path) -> Result<Vec<AttackRecord>> {
    let mut file = std::fs::File::open(bin_path(base))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| AttackError::Artifact("truncated header".into()))?;
    if &magic != ARTIFACT_MAGIC {
        return Err(AttackError::Artifact("wrong magic header".into()));
    }
    let mut b8 = [0u8; 8];
    file.read_exact(&mut b8)
        .map_err(|_| AttackError::Artifact("truncated count".into()))?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut b4 = [0u8; 4];
    file.read_exact(&mut b4)
        .map_err(|_| AttackError::Artifact("truncated dim".into()))?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != count * dim * 16 {
        return Err(AttackError::Artifact(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            count * dim * 16
        )));
    }
    let read_vec = |offset: usize| -> Vec<f64> {
        payload[offset..offset + dim * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path(base))?;
    let mut records = Vec::with_capacity(count);
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        if i >= count {
            return Err(AttackError::Artifact("more csv rows than payload".into()));
        }
        let parse_err = |field: &str| AttackError::Artifact(format!("bad field {field} in row {i}"));
        let index: usize = row[0].parse().map_err(|_| parse_err("index"))?;
        let family = match &row[1] {
            "fgsm" => AttackFamily::Fgsm,
            "bim" => AttackFamily::Bim,
            "mim" => AttackFamily::Mim,
            _ => return Err(parse_err("family")),
        };
        let mode = match &row[2] {
            "untargeted" => ModeTag::Untargeted,
            "targeted" => ModeTag::Targeted,
            "evade" => ModeTag::Evade,
            _ => return Err(parse_err("mode")),
        };
        let epsilon: f64 = row[3].parse().map_err(|_| parse_err("epsilon"))?;
        let iterations: usize = row[4].parse().map_err(|_| parse_err("iterations"))?;
        let success: bool = row[5].parse().map_err(|_| parse_err("success"))?;
        let iterations_used: usize = row[6].parse().map_err(|_| parse_err("iterations_used"))?;
        let final_loss: f64 = row[7].parse().map_err(|_| parse_err("final_loss"))?;
        let target_class = if row[8].is_empty() {
            None
        } else {
            Some(row[8].parse().map_err(|_| parse_err("target_class"))?)
        };
        let clean = Tensor::vector(&read_vec(i * dim * 16));
        let perturbed = Tensor::vector(&read_vec(i * dim * 16 + dim * 8));
        records.push(AttackRecord {
            index,
            clean,
            outcome: AttackOutcome {
                perturbed,
                success,
                iterations_used,
                final_loss,
            },
            family,
            mode,
            epsilon,
            iterations,
            target_class,
        });
    }
    if records.len() != count {
        return Err(AttackError::Artifact(format!(
            "csv holds {} rows, payload {count}",
            records.len()
        )));
    }
    Ok(records)
}
