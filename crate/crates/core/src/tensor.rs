//! Dense row-major tensors over `f64`, the carrier for all numerics.
//!
//! Shapes follow numpy conventions: a scalar has shape `[]`, broadcasting
//! aligns trailing axes and an extent of 1 stretches to match.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("{op}: shapes {lhs:?} and {rhs:?} do not conform")]
    Mismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} implies {expected} elements but the buffer holds {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: rank-0 tensor has no last axis")]
    NoLastAxis { op: &'static str },
}

/// Dense n-dimensional array. `data.len() == product(shape)` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// Row vector of shape `[1, values.len()]`.
    pub fn row_vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Uniform samples in `[lo, hi)`, filled in row-major order.
    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a one-element tensor, regardless of rank.
    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "scalar_value on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extent of the last axis; rows = numel / last_extent.
    fn last_axis(&self, op: &'static str) -> Result<(usize, usize), ShapeError> {
        match self.shape.last() {
            Some(&k) => Ok((self.numel() / k.max(1), k)),
            None => Err(ShapeError::NoLastAxis { op }),
        }
    }

    /// Slice of row `i` for a tensor viewed as `[rows, last]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let k = *self.shape.last().expect("row() needs rank >= 1");
        &self.data[i * k..(i + 1) * k]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    /// Elementwise binary op with numpy-style broadcasting.
    pub fn broadcast_zip(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, ShapeError> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let out_shape =
            broadcast_shape(&self.shape, &other.shape).ok_or_else(|| ShapeError::Mismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })?;
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let n: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..n {
            let ia: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
            let ib: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
            data.push(f(self.data[ia], other.data[ib]));
            for ax in (0..out_shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.broadcast_zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.broadcast_zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.broadcast_zip(other, "mul", |a, b| a * b)
    }

    /// Plain 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        if self.rank() != 2 {
            return Err(ShapeError::NotAMatrix {
                op: "matmul",
                shape: self.shape.clone(),
            });
        }
        if other.rank() != 2 {
            return Err(ShapeError::NotAMatrix {
                op: "matmul",
                shape: other.shape.clone(),
            });
        }
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(ShapeError::Mismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                let crow = &mut data[i * m..(i + 1) * m];
                for j in 0..m {
                    crow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }

    pub fn transpose(&self) -> Result<Tensor, ShapeError> {
        if self.rank() != 2 {
            return Err(ShapeError::NotAMatrix {
                op: "transpose",
                shape: self.shape.clone(),
            });
        }
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over the last axis, keeping it as extent 1.
    pub fn sum_last(&self) -> Result<Tensor, ShapeError> {
        let (rows, k) = self.last_axis("sum_last")?;
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = 1;
        let data = (0..rows).map(|r| self.row(r).iter().sum()).collect();
        let _ = k;
        Ok(Tensor { shape, data })
    }

    /// Max over the last axis (kept as extent 1) plus the first argmax per row.
    pub fn max_last(&self) -> Result<(Tensor, Vec<usize>), ShapeError> {
        let (rows, k) = self.last_axis("max_last")?;
        if k == 0 {
            return Err(ShapeError::NoLastAxis { op: "max_last" });
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = 1;
        let mut data = Vec::with_capacity(rows);
        let mut argmax = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = self.row(r);
            let (mut bi, mut bv) = (0usize, row[0]);
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > bv {
                    bv = v;
                    bi = j;
                }
            }
            data.push(bv);
            argmax.push(bi);
        }
        Ok((Tensor { shape, data }, argmax))
    }

    /// Materialize this tensor at a broadcast-compatible larger shape.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor, ShapeError> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let strides = if broadcast_shape(&self.shape, shape).as_deref() == Some(shape) {
            broadcast_strides(&self.shape, shape)
        } else {
            return Err(ShapeError::Mismatch {
                op: "broadcast_to",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        };
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            let i: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[i]);
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Reduce a gradient of broadcast shape back to `target` by summing the
    /// stretched axes. Inverse of `broadcast_to` for the chain rule.
    pub fn unbroadcast(&self, target: &[usize]) -> Tensor {
        if self.shape == target {
            return self.clone();
        }
        let strides = broadcast_strides(target, &self.shape);
        let tlen: usize = target.iter().product();
        let mut data = vec![0.0; tlen];
        let mut idx = vec![0usize; self.shape.len()];
        for &v in &self.data {
            let i: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data[i] += v;
            for ax in (0..self.shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor {
            shape: target.to_vec(),
            data,
        }
    }

    /// L-infinity distance between two same-shape tensors.
    pub fn linf_distance(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Broadcast shape of two operand shapes, or None if they do not conform.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let eb = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return None;
        };
    }
    Some(out)
}

/// Row-major strides of `shape` viewed at broadcast shape `out`; stretched
/// axes get stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut natural = vec![0usize; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        natural[i] = acc;
        acc *= shape[i];
    }
    let mut strides = vec![0usize; out.len()];
    for i in 0..out.len() {
        if i >= offset && shape[i - offset] != 1 {
            strides[i] = natural[i - offset];
        }
    }
    strides
}
