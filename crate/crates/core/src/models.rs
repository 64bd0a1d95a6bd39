//! Dense classifiers with three prediction heads: plain softmax, MC-dropout
//! ensembling over a softmax net, and Dirichlet-concentration output for
//! prior networks.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Node};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ADVMODEL";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation requires a {expected} head, model has {got}")]
    WrongHead {
        expected: &'static str,
        got: &'static str,
    },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("ensemble needs at least one member")]
    ZeroMembers,
    #[error("probabilities must be nonnegative and sum to 1 (sum was {sum})")]
    InvalidDistribution { sum: f64 },
    #[error("Dirichlet concentration must be strictly positive (found {value})")]
    NonPositiveAlpha { value: f64 },
    #[error("unsupported weight file: {detail}")]
    UnsupportedFormat { detail: String },
    #[error("corrupt weight file: {detail}")]
    CorruptFile { detail: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Output head: what the final-layer logits parameterize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Logits feed a softmax over class labels.
    Softmax,
    /// Logits map to Dirichlet concentrations via `alpha = exp(logit)`.
    DirichletExp,
    /// Softplus alternative for the concentration mapping.
    DirichletSoftplus,
}

impl Head {
    fn name(&self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::DirichletExp => "dirichlet_exp",
            Head::DirichletSoftplus => "dirichlet_softplus",
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        !matches!(self, Head::Softmax)
    }
}

/// Discrete distribution over K classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidDistribution { sum });
        }
        Ok(CategoricalDist { probs })
    }

    pub fn uniform(k: usize) -> Self {
        CategoricalDist {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Index of the second-largest probability (first such index on ties).
    pub fn second_most_likely(&self) -> usize {
        let top = self.argmax();
        let mut second = if top == 0 { 1 } else { 0 };
        for (i, &p) in self.probs.iter().enumerate() {
            if i != top && p > self.probs[second] {
                second = i;
            }
        }
        second
    }
}

/// Dirichlet concentration vector with cached precision `alpha0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        for &a in &alpha {
            if !(a > 0.0) {
                return Err(ModelError::NonPositiveAlpha { value: a });
            }
        }
        // order-insensitive sum so permuted parameter vectors share alpha0
        // bit-exactly
        let mut sorted = alpha.clone();
        sorted.sort_by(f64::total_cmp);
        let alpha0 = sorted.iter().sum();
        Ok(DirichletParams { alpha, alpha0 })
    }

    pub fn flat(k: usize) -> Self {
        DirichletParams {
            alpha: vec![1.0; k],
            alpha0: k as f64,
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// Expected categorical distribution under the Dirichlet: `alpha_c / alpha0`.
    pub fn predictive(&self) -> CategoricalDist {
        CategoricalDist {
            probs: self.alpha.iter().map(|a| a / self.alpha0).collect(),
        }
    }
}

/// Expected categorical distribution under a Dirichlet prior.
pub fn dirichlet_predictive(d: &DirichletParams) -> CategoricalDist {
    d.predictive()
}

/// MC-dropout ensemble: member distributions plus their arithmetic mean.
#[derive(Debug, Clone)]
pub struct EnsemblePrediction {
    members: Vec<CategoricalDist>,
    expected: CategoricalDist,
}

impl EnsemblePrediction {
    pub fn new(members: Vec<CategoricalDist>) -> Result<Self> {
        if members.is_empty() {
            return Err(ModelError::ZeroMembers);
        }
        let k = members[0].k();
        let mut mean = vec![0.0; k];
        for m in &members {
            for (acc, &p) in mean.iter_mut().zip(m.probs()) {
                *acc += p;
            }
        }
        let n = members.len() as f64;
        mean.iter_mut().for_each(|p| *p /= n);
        Ok(EnsemblePrediction {
            members,
            expected: CategoricalDist::new(mean)?,
        })
    }

    pub fn members(&self) -> &[CategoricalDist] {
        &self.members
    }

    pub fn expected(&self) -> &CategoricalDist {
        &self.expected
    }
}

/// Whether and how dropout masks are sampled during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutSpec {
    Off,
    /// Sample one mask per hidden layer from a ChaCha stream with this seed.
    Seeded(u64),
}

/// Parameter nodes bound into one graph; layer order, `(weight, bias)` pairs.
pub struct GraphParams<'g> {
    pub layers: Vec<(Node<'g>, Node<'g>)>,
}

/// Fully connected classifier. Immutable during prediction; training mutates
/// weights through [`Classifier::apply_update`].
#[derive(Debug, Clone)]
pub struct Classifier {
    input_dim: usize,
    hidden: Vec<usize>,
    classes: usize,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    leak: f64,
    dropout_keep: f64,
    head: Head,
    seed: u64,
}

impl Classifier {
    /// Fresh network with Glorot-uniform weights and zero biases; fully
    /// determined by `seed`.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        head: Head,
        leak: f64,
        dropout_keep: f64,
        seed: u64,
    ) -> Self {
        assert!(input_dim > 0 && classes > 0, "degenerate layer widths");
        assert!(
            dropout_keep > 0.0 && dropout_keep <= 1.0,
            "dropout_keep must lie in (0, 1]"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut fan_in = input_dim;
        for &w in hidden.iter().chain(std::iter::once(&classes)) {
            let bound = (6.0 / (fan_in + w) as f64).sqrt();
            weights.push(Tensor::rand_uniform(&[fan_in, w], -bound, bound, &mut rng));
            biases.push(Tensor::zeros(&[w]));
            fan_in = w;
        }
        Classifier {
            input_dim,
            hidden: hidden.to_vec(),
            classes,
            weights,
            biases,
            leak,
            dropout_keep,
            head,
            seed,
        }
    }

    /// Build a classifier around explicit parameter tensors.
    pub fn with_parameters(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        head: Head,
        leak: f64,
        dropout_keep: f64,
        seed: u64,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
    ) -> Result<Self> {
        let mut fan_in = input_dim;
        let widths: Vec<usize> = hidden.iter().copied().chain([classes]).collect();
        if weights.len() != widths.len() || biases.len() != widths.len() {
            return Err(ModelError::DimensionMismatch {
                expected: widths.len(),
                got: weights.len(),
            });
        }
        for (i, &w) in widths.iter().enumerate() {
            if weights[i].shape() != [fan_in, w] || biases[i].shape() != [w] {
                return Err(ModelError::DimensionMismatch {
                    expected: fan_in * w,
                    got: weights[i].numel(),
                });
            }
            fan_in = w;
        }
        Ok(Classifier {
            input_dim,
            hidden: hidden.to_vec(),
            classes,
            weights,
            biases,
            leak,
            dropout_keep,
            head,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn dropout_keep(&self) -> f64 {
        self.dropout_keep
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Bind the parameters of every layer into `g`, optionally as trainable
    /// leaves. Re-use one binding per graph so gradients accumulate across
    /// multiple forward passes (e.g. in-domain plus OOD batches).
    pub fn bind_params<'g>(&self, g: &'g Graph, trainable: bool) -> GraphParams<'g> {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (g.leaf(w.clone(), trainable), g.leaf(b.clone(), trainable)))
            .collect();
        GraphParams { layers }
    }

    /// Forward pass to logits for a `[batch, input_dim]` input node.
    pub fn logits_with<'g>(
        &self,
        params: &GraphParams<'g>,
        x: Node<'g>,
        dropout: DropoutSpec,
    ) -> Result<Node<'g>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                got: shape.last().copied().unwrap_or(0),
            });
        }
        let mut rng = match dropout {
            DropoutSpec::Seeded(s) if self.dropout_keep < 1.0 => {
                Some(ChaCha8Rng::seed_from_u64(s))
            }
            _ => None,
        };
        let mut h = x;
        for (i, (w, b)) in params.layers.iter().enumerate() {
            h = h.matmul(*w)?.add(*b)?;
            if i + 1 < self.n_layers() {
                h = h.leaky_relu(self.leak);
                if let Some(rng) = rng.as_mut() {
                    let keep = self.dropout_keep;
                    let mask = Tensor::new(
                        h.shape().to_vec(),
                        (0..h.value().numel())
                            .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                            .collect(),
                    )
                    .expect("mask shape matches activation");
                    h = h.dropout_mask(&mask)?;
                }
            }
            if !h.value().all_finite() {
                return Err(ModelError::NonFiniteActivation { layer: i });
            }
        }
        Ok(h)
    }

    /// Convenience forward with parameters bound as constants.
    pub fn logits_node<'g>(
        &self,
        g: &'g Graph,
        x: Node<'g>,
        dropout: DropoutSpec,
    ) -> Result<Node<'g>> {
        let params = self.bind_params(g, false);
        self.logits_with(&params, x, dropout)
    }

    /// Map final-layer logits to the head's output: class probabilities for
    /// softmax heads, concentrations for Dirichlet heads.
    pub fn head_node<'g>(&self, logits: Node<'g>) -> Result<Node<'g>> {
        // Logits beyond +/-700 would overflow exp or underflow to an exact
        // zero concentration; saturate there so alpha stays representable
        // and strictly positive.
        Ok(match self.head {
            Head::Softmax => logits.softmax()?,
            Head::DirichletExp => logits.clamp(-700.0, 700.0).exp(),
            Head::DirichletSoftplus => logits.clamp(-700.0, 700.0).softplus(),
        })
    }

    fn input_row(&self, x: &Tensor) -> Result<Tensor> {
        let flat = match x.shape() {
            [d] => *d,
            [1, d] => *d,
            other => other.iter().product(),
        };
        if flat != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                got: flat,
            });
        }
        Tensor::new(vec![1, self.input_dim], x.data().to_vec()).map_err(|_| {
            ModelError::DimensionMismatch {
                expected: self.input_dim,
                got: x.numel(),
            }
        })
    }

    /// Class distribution from a softmax-head network. Deterministic when
    /// `dropout` is `Off`; a pure function of `(weights, x, seed)` otherwise.
    pub fn predict_softmax(&self, x: &Tensor, dropout: DropoutSpec) -> Result<CategoricalDist> {
        if self.head != Head::Softmax {
            return Err(ModelError::WrongHead {
                expected: "softmax",
                got: self.head.name(),
            });
        }
        let g = Graph::new();
        let xn = g.constant(self.input_row(x)?);
        let logits = self.logits_node(&g, xn, dropout)?;
        let probs = logits.softmax()?;
        CategoricalDist::new(probs.value().data().to_vec())
    }

    /// MC-dropout ensemble of `m` members with masks drawn from `seed`.
    pub fn predict_mc_dropout(
        &self,
        x: &Tensor,
        m: usize,
        seed: u64,
    ) -> Result<EnsemblePrediction> {
        if m == 0 {
            return Err(ModelError::ZeroMembers);
        }
        if self.dropout_keep >= 1.0 {
            log::warn!("MC-dropout with dropout_keep = 1: ensemble is degenerate");
        }
        let members = (0..m)
            .map(|i| self.predict_softmax(x, DropoutSpec::Seeded(derive_seed(seed, "mc", i as u64))))
            .collect::<Result<Vec<_>>>()?;
        EnsemblePrediction::new(members)
    }

    /// Dirichlet concentrations from a prior-network head.
    pub fn predict_prior_network(&self, x: &Tensor) -> Result<DirichletParams> {
        if !self.head.is_dirichlet() {
            return Err(ModelError::WrongHead {
                expected: "dirichlet",
                got: self.head.name(),
            });
        }
        let g = Graph::new();
        let xn = g.constant(self.input_row(x)?);
        let logits = self.logits_node(&g, xn, DropoutSpec::Off)?;
        let alpha = self.head_node(logits)?;
        DirichletParams::new(alpha.value().data().to_vec())
    }

    /// Gradient-descent parameter update used by the trainer.
    pub fn apply_update(&mut self, layer: usize, weight_delta: &Tensor, bias_delta: &Tensor) {
        let w = &mut self.weights[layer];
        for (p, d) in w.data_mut().iter_mut().zip(weight_delta.data()) {
            *p += d;
        }
        let b = &mut self.biases[layer];
        for (p, d) in b.data_mut().iter_mut().zip(bias_delta.data()) {
            *p += d;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.push(match self.head {
            Head::Softmax => 0,
            Head::DirichletExp => 1,
            Head::DirichletSoftplus => 2,
        });
        buf.extend_from_slice(&self.leak.to_le_bytes());
        buf.extend_from_slice(&self.dropout_keep.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_layers() as u32).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&(w.shape()[1] as u32).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in b.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        read_exact(&mut file, &mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::UnsupportedFormat {
                detail: "wrong magic header".into(),
            });
        }
        let version = read_u32(&mut file)?;
        if version != FORMAT_VERSION {
            return Err(ModelError::UnsupportedFormat {
                detail: format!("format version {version}, expected {FORMAT_VERSION}"),
            });
        }
        let mut head_byte = [0u8; 1];
        read_exact(&mut file, &mut head_byte)?;
        let head = match head_byte[0] {
            0 => Head::Softmax,
            1 => Head::DirichletExp,
            2 => Head::DirichletSoftplus,
            other => {
                return Err(ModelError::CorruptFile {
                    detail: format!("unknown head tag {other}"),
                })
            }
        };
        let leak = read_f64(&mut file)?;
        let dropout_keep = read_f64(&mut file)?;
        let seed = read_u64(&mut file)?;
        let input_dim = read_u32(&mut file)? as usize;
        let n_layers = read_u32(&mut file)? as usize;
        if input_dim == 0 || n_layers == 0 || n_layers > 1024 {
            return Err(ModelError::CorruptFile {
                detail: "implausible layer table".into(),
            });
        }
        let mut widths = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            widths.push(read_u32(&mut file)? as usize);
        }
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut fan_in = input_dim;
        for &w in &widths {
            let mut wdata = vec![0.0; fan_in * w];
            for v in wdata.iter_mut() {
                *v = read_f64(&mut file)?;
            }
            let mut bdata = vec![0.0; w];
            for v in bdata.iter_mut() {
                *v = read_f64(&mut file)?;
            }
            weights.push(Tensor::new(vec![fan_in, w], wdata).expect("sized above"));
            biases.push(Tensor::new(vec![w], bdata).expect("sized above"));
            fan_in = w;
        }
        let classes = *widths.last().unwrap();
        let hidden = widths[..n_layers - 1].to_vec();
        Classifier::with_parameters(
            input_dim,
            &hidden,
            classes,
            head,
            leak,
            dropout_keep,
            seed,
            weights,
            biases,
        )
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelError::CorruptFile {
                detail: "truncated payload".into(),
            }
        } else {
            ModelError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn zero_weights_give_uniform_prediction() {
        let mut net = Classifier::new(3, &[8], 4, Head::Softmax, 0.2, 1.0, 1);
        for w in net.weights.iter_mut() {
            *w = Tensor::zeros(w.shape());
        }
        let p = net
            .predict_softmax(&Tensor::vector(&[0.3, -0.7, 0.1]), DropoutSpec::Off)
            .unwrap();
        for &v in p.probs() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_layer_softmax_identity() {
        // logits (ln 2, 0) -> probs (2/3, 1/3)
        let weights = vec![Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()];
        let biases = vec![Tensor::zeros(&[2])];
        let net = Classifier::with_parameters(
            2,
            &[],
            2,
            Head::Softmax,
            0.2,
            1.0,
            0,
            weights,
            biases,
        )
        .unwrap();
        let p = net
            .predict_softmax(&Tensor::vector(&[ln(2.0), 0.0]), DropoutSpec::Off)
            .unwrap();
        assert!((p.probs()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.probs()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let net = Classifier::new(3, &[5, 4], 3, Head::Softmax, 0.2, 1.0, 42);
        let x = [0.25, -0.5, 0.75];
        // independent straight-line forward pass
        let mut h: Vec<f64> = x.to_vec();
        for (li, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
            let (nin, nout) = (w.shape()[0], w.shape()[1]);
            let mut next = vec![0.0; nout];
            for (j, n) in next.iter_mut().enumerate() {
                let mut acc = b.data()[j];
                for i in 0..nin {
                    acc += h[i] * w.data()[i * nout + j];
                }
                *n = acc;
            }
            if li + 1 < net.weights().len() {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v *= 0.2;
                    }
                }
            }
            h = next;
        }
        let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = h.iter().map(|v| (v - m).exp()).sum();
        let expected: Vec<f64> = h.iter().map(|v| (v - m).exp() / z).collect();

        let p = net
            .predict_softmax(&Tensor::vector(&x), DropoutSpec::Off)
            .unwrap();
        for (a, b) in p.probs().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn mc_dropout_degenerate_when_keep_is_one() {
        let net = Classifier::new(2, &[6], 3, Head::Softmax, 0.2, 1.0, 3);
        let x = Tensor::vector(&[0.1, 0.9]);
        let det = net.predict_softmax(&x, DropoutSpec::Off).unwrap();
        let ens = net.predict_mc_dropout(&x, 5, 123).unwrap();
        for m in ens.members() {
            assert_eq!(m.probs(), det.probs());
        }
        assert_eq!(ens.expected().probs(), det.probs());
    }

    #[test]
    fn single_member_ensemble_is_its_own_mean() {
        let net = Classifier::new(2, &[6], 3, Head::Softmax, 0.2, 0.6, 3);
        let ens = net
            .predict_mc_dropout(&Tensor::vector(&[0.4, -0.2]), 1, 9)
            .unwrap();
        assert_eq!(ens.members().len(), 1);
        assert_eq!(ens.expected().probs(), ens.members()[0].probs());
    }

    #[test]
    fn mc_dropout_is_pure_in_its_seed() {
        let net = Classifier::new(2, &[6], 3, Head::Softmax, 0.2, 0.5, 7);
        let x = Tensor::vector(&[0.4, -0.2]);
        let a = net.predict_mc_dropout(&x, 8, 55).unwrap();
        let b = net.predict_mc_dropout(&x, 8, 55).unwrap();
        for (ma, mb) in a.members().iter().zip(b.members()) {
            assert_eq!(ma.probs(), mb.probs());
        }
        assert!(net.predict_mc_dropout(&x, 0, 55).is_err());
    }

    #[test]
    fn prior_network_head_identities() {
        // zero logits -> flat Dirichlet
        let weights = vec![Tensor::zeros(&[2, 3])];
        let biases = vec![Tensor::zeros(&[3])];
        let net = Classifier::with_parameters(
            2,
            &[],
            3,
            Head::DirichletExp,
            0.2,
            1.0,
            0,
            weights,
            biases,
        )
        .unwrap();
        let d = net
            .predict_prior_network(&Tensor::vector(&[0.5, 0.5]))
            .unwrap();
        assert_eq!(d.alpha(), &[1.0, 1.0, 1.0]);
        assert_eq!(d.alpha0(), 3.0);

        // logits (ln 8, ln 1, ln 1) via bias -> alpha (8, 1, 1)
        let weights = vec![Tensor::zeros(&[2, 3])];
        let biases = vec![Tensor::vector(&[8.0f64.ln(), 0.0, 0.0])];
        let net = Classifier::with_parameters(
            2,
            &[],
            3,
            Head::DirichletExp,
            0.2,
            1.0,
            0,
            weights,
            biases,
        )
        .unwrap();
        let d = net
            .predict_prior_network(&Tensor::vector(&[0.0, 0.0]))
            .unwrap();
        assert!((d.alpha()[0] - 8.0).abs() < 1e-12);
        assert!((d.alpha0() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_predictive_identities() {
        let d = DirichletParams::new(vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.predictive().probs(), &[0.25, 0.25, 0.25, 0.25]);
        let d = DirichletParams::new(vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.predictive().probs(), &[0.5, 0.25, 0.25]);
        let d = DirichletParams::new(vec![3.5, 0.5, 6.0]).unwrap();
        let p = d.predictive();
        assert!((p.probs()[0] - 0.35).abs() < 1e-12);
        assert!((p.probs()[1] - 0.05).abs() < 1e-12);
        assert!((p.probs()[2] - 0.60).abs() < 1e-12);
    }

    #[test]
    fn wrong_head_is_reported() {
        let net = Classifier::new(2, &[4], 3, Head::Softmax, 0.2, 1.0, 0);
        assert!(matches!(
            net.predict_prior_network(&Tensor::vector(&[0.0, 0.0])),
            Err(ModelError::WrongHead { .. })
        ));
        let pn = Classifier::new(2, &[4], 3, Head::DirichletExp, 0.2, 1.0, 0);
        assert!(matches!(
            pn.predict_softmax(&Tensor::vector(&[0.0, 0.0]), DropoutSpec::Off),
            Err(ModelError::WrongHead { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Classifier::new(3, &[4], 2, Head::Softmax, 0.2, 1.0, 0);
        let err = net
            .predict_softmax(&Tensor::vector(&[1.0, 2.0]), DropoutSpec::Off)
            .unwrap_err();
        assert!(matches!(
            err,
            ModelError::DimensionMismatch {
                expected: 3,
                got: 2
            }
        ));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = Classifier::new(4, &[16, 8], 3, Head::DirichletExp, 0.2, 0.8, 77);
        net.save(&path).unwrap();
        let loaded = Classifier::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = Tensor::rand_uniform(&[4], -1.0, 1.0, &mut rng);
            let a = net.predict_prior_network(&x).unwrap();
            let b = loaded.predict_prior_network(&x).unwrap();
            assert_eq!(a.alpha(), b.alpha());
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = Classifier::new(4, &[8], 3, Head::Softmax, 0.2, 0.8, 7);
        net.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            Classifier::load(&path),
            Err(ModelError::CorruptFile { .. })
        ));
    }

    #[test]
    fn wrong_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = Classifier::new(4, &[8], 3, Head::Softmax, 0.2, 0.8, 7);
        net.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Classifier::load(&path),
            Err(ModelError::UnsupportedFormat { .. })
        ));
    }
}
