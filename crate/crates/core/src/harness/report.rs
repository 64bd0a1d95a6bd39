//! Report emission: per-cell JSON + threshold CSV + score histograms, and an
//! aggregate CSV with mean +/- std across seeds (or transfer pairs) for each
//! (model, attack, mode, epsilon, iterations) grid point.

use std::collections::BTreeMap;
use std::path::Path;

use super::{HarnessError, Result, ResultCell};
use crate::metrics::roc;

const HIST_BINS: usize = 40;

pub fn cells_dir(out_dir: &Path) -> std::path::PathBuf {
    out_dir.join("cells")
}

pub fn report_dir(out_dir: &Path) -> std::path::PathBuf {
    out_dir.join("report")
}

/// Persist cells as JSON plus threshold and histogram CSVs. Deterministic:
/// cells are ordered by file stem and all floats print in shortest
/// round-trip form.
pub fn persist_cells(out_dir: &Path, cells: &[ResultCell]) -> Result<()> {
    std::fs::create_dir_all(cells_dir(out_dir))?;
    let mut ordered: Vec<&ResultCell> = cells.iter().collect();
    ordered.sort_by_key(|c| c.key.file_stem());
    for cell in &ordered {
        let stem = cell.key.file_stem();
        std::fs::write(
            cells_dir(out_dir).join(format!("{stem}.json")),
            serde_json::to_string_pretty(cell)?,
        )?;
        if !cell.natural_scores.is_empty() && !cell.attack_scores.is_empty() {
            // threshold arrays are recomputed from the stored scores so the
            // report step works identically on freshly run and reloaded cells
            let report = roc(&cell.natural_scores, &cell.attack_scores)?;
            report
                .write_threshold_csv(&cells_dir(out_dir).join(format!("{stem}_thresholds.csv")))?;
            write_histogram(cell, &cells_dir(out_dir).join(format!("{stem}_hist.csv")))?;
        }
    }
    Ok(())
}

/// Rebuild the aggregate table from the given cells.
pub fn write_aggregate_file(out_dir: &Path, cells: &[ResultCell]) -> Result<()> {
    std::fs::create_dir_all(report_dir(out_dir))?;
    let mut ordered: Vec<&ResultCell> = cells.iter().collect();
    ordered.sort_by_key(|c| c.key.file_stem());
    write_aggregate(&ordered, &report_dir(out_dir).join("aggregate.csv"))
}

/// Persist new cells, then regenerate the aggregate over everything stored
/// under `out_dir`.
pub fn publish(out_dir: &Path, new_cells: &[ResultCell]) -> Result<()> {
    persist_cells(out_dir, new_cells)?;
    let all = read_cells(out_dir)?;
    write_aggregate_file(out_dir, &all)
}

/// Load previously persisted cells (for re-running `report` alone).
pub fn read_cells(out_dir: &Path) -> Result<Vec<ResultCell>> {
    let dir = cells_dir(out_dir);
    if !dir.exists() {
        return Err(HarnessError::Config(format!(
            "no cells directory under {}",
            out_dir.display()
        )));
    }
    let mut stems: Vec<std::path::PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    stems.sort();
    let mut cells = Vec::with_capacity(stems.len());
    for path in stems {
        let cell: ResultCell = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        cells.push(cell);
    }
    Ok(cells)
}

/// Natural-vs-adversarial uncertainty histogram over a shared bin grid.
fn write_histogram(cell: &ResultCell, path: &Path) -> Result<()> {
    let nat = &cell.natural_scores;
    let att: Vec<f64> = cell.attack_scores.iter().map(|a| a.uncertainty).collect();
    let lo = nat
        .iter()
        .chain(&att)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = nat
        .iter()
        .chain(&att)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi, bins) = if hi > lo {
        (lo, hi, HIST_BINS)
    } else {
        (lo, lo + 1.0, 1)
    };
    let width = (hi - lo) / bins as f64;
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut nat_counts = vec![0usize; bins];
    let mut att_counts = vec![0usize; bins];
    for &v in nat {
        nat_counts[bin_of(v)] += 1;
    }
    for &v in &att {
        att_counts[bin_of(v)] += 1;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(std::io::Error::other)?;
    w.write_record(["bin_lo", "bin_hi", "natural", "attack"])
        .map_err(std::io::Error::other)?;
    for i in 0..bins {
        w.write_record([
            format!("{}", lo + i as f64 * width),
            format!("{}", lo + (i + 1) as f64 * width),
            nat_counts[i].to_string(),
            att_counts[i].to_string(),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    scope: &'static str,
    model: String,
    family: String,
    mode: String,
    epsilon_bits: u64,
    iterations: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn write_aggregate(cells: &[&ResultCell], path: &Path) -> Result<()> {
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for cell in cells {
        let key = GroupKey {
            scope: if cell.key.transfer_source.is_some() {
                "blackbox"
            } else {
                "whitebox"
            },
            model: cell.key.model.to_string(),
            family: cell.key.family.to_string(),
            mode: cell.key.mode.to_string(),
            epsilon_bits: cell.key.epsilon.to_bits(),
            iterations: cell.key.iterations,
        };
        let entry = groups.entry(key).or_default();
        match &cell.report {
            Some(r) => {
                entry.0.push(r.eer_jsr);
                entry.1.push(r.auc);
                entry.2.push(r.success_rate);
            }
            None => entry.3 += 1,
        }
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(std::io::Error::other)?;
    w.write_record([
        "scope",
        "model",
        "family",
        "mode",
        "epsilon",
        "iterations",
        "cells",
        "failures",
        "jsr_mean",
        "jsr_std",
        "auc_mean",
        "auc_std",
        "success_mean",
        "success_std",
    ])
    .map_err(std::io::Error::other)?;
    for (key, (jsr, auc, succ, failures)) in &groups {
        let cells_n = jsr.len() + failures;
        let fmt = |vals: &[f64]| -> (String, String) {
            if vals.is_empty() {
                ("".into(), "".into())
            } else {
                let (m, s) = mean_std(vals);
                (format!("{m}"), format!("{s}"))
            }
        };
        let (jm, js) = fmt(jsr);
        let (am, asd) = fmt(auc);
        let (sm, ss) = fmt(succ);
        w.write_record([
            key.scope.to_string(),
            key.model.clone(),
            key.family.clone(),
            key.mode.clone(),
            format!("{}", f64::from_bits(key.epsilon_bits)),
            key.iterations.to_string(),
            cells_n.to_string(),
            failures.to_string(),
            jm,
            js,
            am,
            asd,
            sm,
            ss,
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}
