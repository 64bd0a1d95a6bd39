//! Synthetic desk-scale data: Gaussian class clusters inside the unit box,
//! ring-shaped out-of-distribution sets enclosing them, and CSV ingestion
//! for user data. All inputs live in `[-1, 1]^D`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const BOX_LO: f64 = -1.0;
pub const BOX_HI: f64 = 1.0;
const BOX_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error("csv parse error at row {row}, column {col}: {detail}")]
    Parse {
        row: usize,
        col: usize,
        detail: String,
    },
    #[error("csv file is empty")]
    EmptyFile,
    #[error("input {index} leaves the unit box (value {value})")]
    BoxViolation { index: usize, value: f64 },
    #[error("labels must be present exactly for in-domain data")]
    LabelPresence,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("sidecar error: {0}")]
    Sidecar(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    InDomain,
    OodTrain,
    OodEval,
}

/// `[N, D]` inputs in the unit box; labels iff the data is in-domain.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Tensor,
    labels: Option<Vec<usize>>,
    split: Split,
    role: Role,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        labels: Option<Vec<usize>>,
        split: Split,
        role: Role,
    ) -> Result<Self> {
        if inputs.rank() != 2 || inputs.shape()[0] == 0 {
            return Err(DatasetError::Config(format!(
                "inputs must be a nonempty [N, D] tensor, got shape {:?}",
                inputs.shape()
            )));
        }
        for (i, &v) in inputs.data().iter().enumerate() {
            if !(BOX_LO - BOX_SLACK..=BOX_HI + BOX_SLACK).contains(&v) {
                return Err(DatasetError::BoxViolation { index: i, value: v });
            }
        }
        let labelled = labels.is_some();
        if labelled != matches!(role, Role::InDomain) {
            return Err(DatasetError::LabelPresence);
        }
        if let Some(l) = &labels {
            if l.len() != inputs.shape()[0] {
                return Err(DatasetError::Config(format!(
                    "{} labels for {} rows",
                    l.len(),
                    inputs.shape()[0]
                )));
            }
        }
        Ok(Dataset {
            inputs,
            labels,
            split,
            role,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn row_tensor(&self, i: usize) -> Tensor {
        Tensor::vector(self.inputs.row(i))
    }

    /// Submatrix of the given row indices, preserving labels.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Dataset {
            inputs: Tensor::new(vec![idx.len(), d], data).expect("sized above"),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            split: self.split,
            role: self.role,
        }
    }
}

/// Class means on a circle of `radius` in the first two coordinates,
/// starting at 90° and evenly spaced.
pub fn default_means(classes: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let angle = std::f64::consts::FRAC_PI_2
                + 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            let mut m = vec![0.0; dim];
            m[0] = radius * angle.cos();
            if dim > 1 {
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect()
}

/// Balanced isotropic Gaussian clusters, clipped to the unit box.
pub fn make_gaussian_classes(
    classes: usize,
    dim: usize,
    means: &[Vec<f64>],
    sigma: f64,
    n_per_class: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 || n_per_class == 0 {
        return Err(DatasetError::Config(
            "classes, dim and n_per_class must be positive".into(),
        ));
    }
    if means.len() != classes {
        return Err(DatasetError::Config(format!(
            "{} means for {classes} classes",
            means.len()
        )));
    }
    for (c, m) in means.iter().enumerate() {
        if m.len() != dim {
            return Err(DatasetError::Config(format!(
                "mean {c} has dimension {}, expected {dim}",
                m.len()
            )));
        }
        for &v in m {
            if v.abs() > BOX_HI - 3.0 * sigma {
                return Err(DatasetError::Config(format!(
                    "mean {c} is within 3 sigma of the box boundary"
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((m + sigma * z).clamp(BOX_LO, BOX_HI));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![classes * n_per_class, dim], data).expect("sized above"),
        Some(labels),
        split,
        Role::InDomain,
    )
}

/// Annulus (D = 2) or spherical shell (D > 2) with norms in
/// `[radius - thickness, radius + thickness]`.
pub fn make_ring_ood(
    dim: usize,
    radius: f64,
    thickness: f64,
    n: usize,
    seed: u64,
    role: Role,
    split: Split,
) -> Result<Dataset> {
    if n == 0 {
        return Err(DatasetError::Config("ring with n = 0 points".into()));
    }
    if dim < 2 {
        return Err(DatasetError::Config("ring needs dimension >= 2".into()));
    }
    if matches!(role, Role::InDomain) {
        return Err(DatasetError::Config(
            "ring data is unlabeled; role must be OOD".into(),
        ));
    }
    if radius + thickness > BOX_HI || radius - thickness <= 0.0 {
        return Err(DatasetError::Config(format!(
            "ring radius {radius} +/- {thickness} leaves the box or collapses"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        // direction uniform on the sphere, norm uniform over the shell width
        let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        while norm < 1e-12 {
            dir = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let r = rng.random_range(radius - thickness..radius + thickness);
        data.extend(dir.iter().map(|v| v / norm * r));
    }
    Dataset::new(
        Tensor::new(vec![n, dim], data).expect("sized above"),
        None,
        split,
        role,
    )
}

/// Per-column min/max recorded when rescaling raw data into the unit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl ColumnScaling {
    fn fit(rows: &[Vec<f64>], cols: usize) -> Self {
        let mut mins = vec![f64::INFINITY; cols];
        let mut maxs = vec![f64::NEG_INFINITY; cols];
        for row in rows {
            for j in 0..cols {
                mins[j] = mins[j].min(row[j]);
                maxs[j] = maxs[j].max(row[j]);
            }
        }
        ColumnScaling { mins, maxs }
    }

    /// Map a raw value into `[-1, 1]`; constant columns collapse to 0.
    pub fn apply(&self, col: usize, v: f64) -> f64 {
        let span = self.maxs[col] - self.mins[col];
        if span == 0.0 {
            0.0
        } else {
            2.0 * (v - self.mins[col]) / span - 1.0
        }
    }

    /// Inverse of [`ColumnScaling::apply`]; 0 maps back to the constant.
    pub fn invert(&self, col: usize, v: f64) -> f64 {
        let span = self.maxs[col] - self.mins[col];
        if span == 0.0 {
            self.mins[col]
        } else {
            self.mins[col] + (v + 1.0) * span / 2.0
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Load a rectangular numeric CSV, min-max rescale each feature column to
/// `[-1, 1]` and return the scaling so callers can persist it alongside.
/// When `has_labels`, the last column holds integer class indices and the
/// dataset is in-domain; otherwise it is an unlabeled OOD evaluation set.
pub fn load_csv(path: &Path, has_labels: bool) -> Result<(Dataset, ColumnScaling)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(DatasetError::Parse {
                    row: i + 1,
                    col: record.len(),
                    detail: format!("ragged row: {} fields, expected {w}", record.len()),
                })
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            row.push(cell.parse::<f64>().map_err(|e| DatasetError::Parse {
                row: i + 1,
                col: j + 1,
                detail: format!("{e} in {cell:?}"),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    let total_cols = rows[0].len();
    let feature_cols = if has_labels {
        if total_cols < 2 {
            return Err(DatasetError::Config(
                "labeled csv needs at least one feature column".into(),
            ));
        }
        total_cols - 1
    } else {
        total_cols
    };
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let v = row[feature_cols];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(DatasetError::Parse {
                    row: i + 1,
                    col: total_cols,
                    detail: format!("label must be a nonnegative integer, got {v}"),
                });
            }
            labels.push(v as usize);
        }
        Some(labels)
    } else {
        None
    };
    let scaling = ColumnScaling::fit(&rows, feature_cols);
    let mut data = Vec::with_capacity(rows.len() * feature_cols);
    for row in &rows {
        for j in 0..feature_cols {
            data.push(scaling.apply(j, row[j]));
        }
    }
    let role = if has_labels {
        Role::InDomain
    } else {
        Role::OodEval
    };
    let ds = Dataset::new(
        Tensor::new(vec![rows.len(), feature_cols], data).expect("sized above"),
        labels,
        Split::Test,
        role,
    )?;
    Ok((ds, scaling))
}

/// Write a dataset as CSV. With a scaling, values are mapped back to their
/// original units so `load_csv(export_csv(load_csv(f))) == load_csv(f)`.
pub fn export_csv(ds: &Dataset, path: &Path, scaling: Option<&ColumnScaling>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..ds.len() {
        let mut fields: Vec<String> = ds
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let out = match scaling {
                    Some(s) => s.invert(j, v),
                    None => v,
                };
                format!("{out}")
            })
            .collect();
        if let Some(labels) = ds.labels() {
            fields.push(format!("{}", labels[i]));
        }
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_classes_hit_their_means() {
        let means = default_means(3, 2, 0.5);
        let ds =
            make_gaussian_classes(3, 2, &means, 0.08, 500, 11, Split::Train).unwrap();
        assert_eq!(ds.len(), 1500);
        for c in 0..3 {
            let mut acc = [0.0f64; 2];
            let mut n = 0.0;
            for i in 0..ds.len() {
                if ds.labels().unwrap()[i] == c {
                    acc[0] += ds.row(i)[0];
                    acc[1] += ds.row(i)[1];
                    n += 1.0;
                }
            }
            assert!((acc[0] / n - means[c][0]).abs() < 0.02);
            assert!((acc[1] / n - means[c][1]).abs() < 0.02);
        }
    }

    #[test]
    fn single_point_per_class() {
        let means = default_means(4, 3, 0.4);
        let ds = make_gaussian_classes(4, 3, &means, 0.05, 1, 0, Split::Train).unwrap();
        assert_eq!(ds.len(), 4);
    }

    #[test]
    fn generators_are_deterministic() {
        let means = default_means(3, 2, 0.5);
        let a = make_gaussian_classes(3, 2, &means, 0.08, 50, 9, Split::Train).unwrap();
        let b = make_gaussian_classes(3, 2, &means, 0.08, 50, 9, Split::Train).unwrap();
        assert_eq!(a.inputs().data(), b.inputs().data());
        let r1 = make_ring_ood(2, 0.9, 0.05, 40, 3, Role::OodTrain, Split::Train).unwrap();
        let r2 = make_ring_ood(2, 0.9, 0.05, 40, 3, Role::OodTrain, Split::Train).unwrap();
        assert_eq!(r1.inputs().data(), r2.inputs().data());
    }

    #[test]
    fn mean_too_close_to_boundary_is_rejected() {
        let means = vec![vec![0.95, 0.0]];
        let err = make_gaussian_classes(1, 2, &means, 0.08, 10, 0, Split::Train).unwrap_err();
        assert!(matches!(err, DatasetError::Config(_)));
    }

    #[test]
    fn ring_norms_stay_in_the_shell() {
        let ds = make_ring_ood(2, 0.9, 0.05, 300, 5, Role::OodTrain, Split::Train).unwrap();
        for i in 0..ds.len() {
            let norm: f64 = ds.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((0.85..=0.95).contains(&norm), "norm {norm}");
        }
    }

    #[test]
    fn ring_rejects_empty_and_out_of_box() {
        assert!(make_ring_ood(2, 0.9, 0.05, 0, 0, Role::OodEval, Split::Test).is_err());
        assert!(make_ring_ood(2, 0.99, 0.05, 10, 0, Role::OodEval, Split::Test).is_err());
    }

    #[test]
    fn disjoint_rings_do_not_overlap_in_norm() {
        let train = make_ring_ood(2, 0.9, 0.05, 100, 1, Role::OodTrain, Split::Train).unwrap();
        let eval = make_ring_ood(2, 0.75, 0.05, 100, 2, Role::OodEval, Split::Test).unwrap();
        let min_train = (0..train.len())
            .map(|i| train.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        let max_eval = (0..eval.len())
            .map(|i| eval.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        assert!(max_eval < min_train);
    }

    #[test]
    fn csv_min_max_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0,0\n1,2\n").unwrap();
        let (ds, _) = load_csv(&path, false).unwrap();
        assert_eq!(ds.row(0), &[-1.0, -1.0]);
        assert_eq!(ds.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_midpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "5,1\n5,2\n5,3\n").unwrap();
        let (ds, scaling) = load_csv(&path, false).unwrap();
        for i in 0..3 {
            assert_eq!(ds.row(i)[0], 0.0);
        }
        assert_eq!(scaling.invert(0, 0.0), 5.0);
    }

    #[test]
    fn csv_round_trip_through_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0.25,10,0\n-3.5,20,1\n7.125,15,2\n").unwrap();
        let (ds, scaling) = load_csv(&path, true).unwrap();
        let out = dir.path().join("out.csv");
        export_csv(&ds, &out, Some(&scaling)).unwrap();
        let (ds2, _) = load_csv(&out, true).unwrap();
        for i in 0..ds.len() {
            for (a, b) in ds.row(i).iter().zip(ds2.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(ds.labels(), ds2.labels());
    }

    #[test]
    fn ragged_and_bad_cells_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        match load_csv(&path, false) {
            Err(DatasetError::Parse { row: 2, .. }) => {}
            other => panic!("expected ragged-row error, got {other:?}"),
        }
        std::fs::write(&path, "1,2\n3,x\n").unwrap();
        match load_csv(&path, false) {
            Err(DatasetError::Parse { row: 2, col: 2, .. }) => {}
            other => panic!("expected cell error, got {other:?}"),
        }
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_csv(&path, false), Err(DatasetError::EmptyFile)));
    }

    #[test]
    fn scaling_sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = ColumnScaling {
            mins: vec![0.0, -3.5],
            maxs: vec![7.125, 20.0],
        };
        let path = dir.path().join("scale.json");
        s.save(&path).unwrap();
        assert_eq!(ColumnScaling::load(&path).unwrap(), s);
    }
}
