//! Detection-aware evaluation: a sample is labelled positive (natural) when
//! its uncertainty falls below a threshold. Plain tp/fp rates score every
//! generated perturbation; the joint success rate additionally zeroes failed
//! generations, and the operating point quoted everywhere is the threshold
//! where the joint success rate equals `1 - tp`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::AttackOutcome;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} must be nonempty")]
    EmptyInput(&'static str),
    #[error("scores must be finite, found {0}")]
    NonFiniteScore(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Uncertainty of an attack row's final iterate plus whether the generation
/// succeeded (the failure marker carries `success = false`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub uncertainty: f64,
    pub success: bool,
}

/// Threshold-indexed detection curves plus their scalar summaries for one
/// (model, attack, epsilon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    #[serde(skip)]
    pub thresholds: Vec<f64>,
    #[serde(skip)]
    pub tp: Vec<f64>,
    #[serde(skip)]
    pub fp: Vec<f64>,
    #[serde(skip)]
    pub jsr: Vec<f64>,
    pub auc: f64,
    /// Raw AUC below 0.5 means the detector orders the classes backwards;
    /// flagged rather than auto-flipped.
    pub auc_below_half: bool,
    pub eer_threshold: f64,
    pub eer_jsr: f64,
    pub success_rate: f64,
}

impl DetectionReport {
    /// Threshold-indexed arrays as CSV: `threshold, tp, fp, jsr`.
    pub fn write_threshold_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        w.write_record(["threshold", "tp", "fp", "jsr"])?;
        for i in 0..self.thresholds.len() {
            w.write_record([
                format!("{}", self.thresholds[i]),
                format!("{}", self.tp[i]),
                format!("{}", self.fp[i]),
                format!("{}", self.jsr[i]),
            ])?;
        }
        w.flush()
    }
}

/// Fraction of generation attempts that produced an adversarial input.
pub fn success_rate(outcomes: &[AttackOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput("attack outcomes"));
    }
    Ok(outcomes.iter().filter(|o| o.success()).count() as f64 / outcomes.len() as f64)
}

/// `(1/N) * #{attacks that succeeded and scored below T}`.
pub fn joint_success_rate(attacks: &[AttackScore], threshold: f64) -> f64 {
    if attacks.is_empty() {
        return 0.0;
    }
    attacks
        .iter()
        .filter(|a| a.success && a.uncertainty < threshold)
        .count() as f64
        / attacks.len() as f64
}

fn check_finite<'a>(scores: impl Iterator<Item = &'a f64>) -> Result<()> {
    for &s in scores {
        if !s.is_finite() {
            return Err(MetricsError::NonFiniteScore(s));
        }
    }
    Ok(())
}

/// Detection curves over the merged score grid (with sentinels beyond both
/// ends), trapezoidal AUC and the EER operating point.
pub fn roc(naturals: &[f64], attacks: &[AttackScore]) -> Result<DetectionReport> {
    if naturals.is_empty() {
        return Err(MetricsError::EmptyInput("natural scores"));
    }
    if attacks.is_empty() {
        return Err(MetricsError::EmptyInput("attack scores"));
    }
    check_finite(naturals.iter())?;
    check_finite(attacks.iter().map(|a| &a.uncertainty))?;

    let mut grid: Vec<f64> = naturals
        .iter()
        .copied()
        .chain(attacks.iter().map(|a| a.uncertainty))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let lo = grid.first().unwrap() - 1.0;
    let hi = grid.last().unwrap() + 1.0;
    let mut thresholds = Vec::with_capacity(grid.len() + 2);
    thresholds.push(lo);
    thresholds.extend_from_slice(&grid);
    thresholds.push(hi);

    let mut nat_sorted = naturals.to_vec();
    nat_sorted.sort_by(f64::total_cmp);
    let mut att_sorted: Vec<f64> = attacks.iter().map(|a| a.uncertainty).collect();
    att_sorted.sort_by(f64::total_cmp);
    let mut succ_sorted: Vec<f64> = attacks
        .iter()
        .filter(|a| a.success)
        .map(|a| a.uncertainty)
        .collect();
    succ_sorted.sort_by(f64::total_cmp);

    let frac_below = |sorted: &[f64], t: f64, denom: usize| -> f64 {
        if denom == 0 {
            0.0
        } else {
            sorted.partition_point(|&v| v < t) as f64 / denom as f64
        }
    };
    let n_att = attacks.len();
    let tp: Vec<f64> = thresholds
        .iter()
        .map(|&t| frac_below(&nat_sorted, t, nat_sorted.len()))
        .collect();
    let fp: Vec<f64> = thresholds
        .iter()
        .map(|&t| frac_below(&att_sorted, t, n_att))
        .collect();
    let jsr: Vec<f64> = thresholds
        .iter()
        .map(|&t| frac_below(&succ_sorted, t, n_att))
        .collect();

    // trapezoid over the (fp, tp) curve; ties advance both axes at once and
    // earn the Mann-Whitney half credit
    let mut auc = 0.0;
    for i in 1..thresholds.len() {
        auc += (fp[i] - fp[i - 1]) * (tp[i] + tp[i - 1]) / 2.0;
    }

    let (eer_threshold, eer_jsr) = eer_scan(&thresholds, &tp, &jsr);
    let s = succ_sorted.len() as f64 / n_att as f64;
    Ok(DetectionReport {
        thresholds,
        tp,
        fp,
        jsr,
        auc,
        auc_below_half: auc < 0.5,
        eer_threshold,
        eer_jsr,
        success_rate: s,
    })
}

/// Crossing of `jsr(T)` and `1 - tp(T)` with linear interpolation between
/// adjacent grid points. The sentinel-extended grid guarantees a crossing:
/// the difference starts at -1 and ends at the success rate.
fn eer_scan(thresholds: &[f64], tp: &[f64], jsr: &[f64]) -> (f64, f64) {
    let diff = |i: usize| jsr[i] - (1.0 - tp[i]);
    for i in 0..thresholds.len() {
        let d = diff(i);
        if d >= 0.0 {
            if d == 0.0 || i == 0 {
                return (thresholds[i], jsr[i]);
            }
            let d_prev = diff(i - 1);
            let u = -d_prev / (d - d_prev);
            let t = thresholds[i - 1] + u * (thresholds[i] - thresholds[i - 1]);
            let j = jsr[i - 1] + u * (jsr[i] - jsr[i - 1]);
            return (t, j);
        }
    }
    // unreachable on the sentinel grid; fall back to the top end
    (*thresholds.last().unwrap(), *jsr.last().unwrap())
}

/// EER operating point: `(threshold, jsr at that threshold)`.
pub fn eer_operating_point(naturals: &[f64], attacks: &[AttackScore]) -> Result<(f64, f64)> {
    let report = roc(naturals, attacks)?;
    Ok((report.eer_threshold, report.eer_jsr))
}

/// Two-variable detection criterion: accept iff `|center - H| < width`.
/// The failure marker (no score) maps to 0.
pub fn two_variable_indicator(score: Option<f64>, center: f64, width: f64) -> bool {
    match score {
        Some(h) => (center - h).abs() < width,
        None => false,
    }
}
