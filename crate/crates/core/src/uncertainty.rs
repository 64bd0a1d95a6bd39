//! Measures of predictive uncertainty, all in nats.
//!
//! Total uncertainty is the entropy of the (expected) predictive
//! distribution. Distributional uncertainty is mutual information: total
//! uncertainty minus expected data uncertainty, computed over an implicit
//! ensemble (MC dropout) or in closed form under a Dirichlet prior.

use serde::{Deserialize, Serialize};

use crate::models::{CategoricalDist, DirichletParams, EnsemblePrediction};
use crate::special::{digamma, ln_gamma};

/// Probabilities at or below this are treated as exact zeros (0·ln 0 := 0).
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Entropy,
    MutualInformation,
    DifferentialEntropy,
}

/// A named uncertainty value in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScore {
    pub kind: MeasureKind,
    pub value: f64,
}

/// Sum in sorted term order: exactly invariant under input permutations.
fn sorted_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut terms: Vec<f64> = terms.collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    sorted_sum(
        probs
            .iter()
            .map(|&p| if p > PROB_FLOOR { -p * p.ln() } else { 0.0 }),
    )
}

/// Shannon entropy of a categorical distribution.
pub fn entropy(p: &CategoricalDist) -> UncertaintyScore {
    UncertaintyScore {
        kind: MeasureKind::Entropy,
        value: entropy_of(p.probs()),
    }
}

/// Ensemble mutual information: entropy of the mean distribution minus the
/// mean member entropy. Nonnegative by Jensen; clamped at zero against
/// floating-point residue.
pub fn mutual_information_ensemble(e: &EnsemblePrediction) -> UncertaintyScore {
    let total = entropy_of(e.expected().probs());
    let expected_data: f64 = e
        .members()
        .iter()
        .map(|m| entropy_of(m.probs()))
        .sum::<f64>()
        / e.members().len() as f64;
    let mi = total - expected_data;
    if mi < -1e-9 {
        log::warn!("ensemble mutual information clamped from {mi}");
    }
    UncertaintyScore {
        kind: MeasureKind::MutualInformation,
        value: mi.max(0.0),
    }
}

/// Mutual information under a Dirichlet prior, in closed form:
/// H[alpha/alpha0] − Σ_c (alpha_c/alpha0)(ψ(alpha0+1) − ψ(alpha_c+1)).
pub fn mutual_information_dirichlet(d: &DirichletParams) -> UncertaintyScore {
    let a0 = d.alpha0();
    let total = entropy_of(d.predictive().probs());
    let psi_a0 = digamma(a0 + 1.0);
    let expected_data: f64 = d
        .alpha()
        .iter()
        .map(|&a| (a / a0) * (psi_a0 - digamma(a + 1.0)))
        .sum();
    let mi = total - expected_data;
    if mi < -1e-9 {
        log::warn!("Dirichlet mutual information clamped from {mi}");
    }
    UncertaintyScore {
        kind: MeasureKind::MutualInformation,
        value: mi.max(0.0),
    }
}

/// Differential entropy of the Dirichlet itself:
/// ln B(alpha) + (alpha0 − K)ψ(alpha0) − Σ_c (alpha_c − 1)ψ(alpha_c).
pub fn differential_entropy_dirichlet(d: &DirichletParams) -> UncertaintyScore {
    let a0 = d.alpha0();
    let k = d.k() as f64;
    let ln_beta = sorted_sum(d.alpha().iter().map(|&a| ln_gamma(a))) - ln_gamma(a0);
    let value = ln_beta + (a0 - k) * digamma(a0)
        - sorted_sum(d.alpha().iter().map(|&a| (a - 1.0) * digamma(a)));
    UncertaintyScore {
        kind: MeasureKind::DifferentialEntropy,
        value,
    }
}
