//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Graph`] records every operation in creation order; since parents are
//! always recorded before children, walking the tape backwards visits nodes
//! in reverse topological order and a single pass accumulates exact analytic
//! partials into every `requires_grad` leaf.
//!
//! Graphs are single-threaded by construction (`RefCell` interior). Run
//! independent graphs on separate threads; parameters are copied into each
//! graph as leaves, never shared.

use std::cell::RefCell;

use thiserror::Error;

use crate::special;
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{op}: domain violation, operand value {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Scale(usize, f64),
    Clamp(usize, f64, f64),
    SumAll(usize),
    SumLast(usize),
    MaxLast(usize, Vec<usize>),
    Softmax(usize),
    LeakyRelu(usize, f64),
    Lgamma(usize),
    Digamma(usize),
    DropoutMask(usize, Tensor),
}

struct Rec {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph; create nodes through [`Graph::leaf`] / [`Graph::constant`]
/// and combine them with the methods on [`Node`].
#[derive(Default)]
pub struct Graph {
    recs: RefCell<Vec<Rec>>,
}

/// Lightweight handle into a [`Graph`].
#[derive(Clone, Copy)]
pub struct Node<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Node<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node").field("id", &self.id).finish()
    }
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, node: Node<'_>) -> Option<&Tensor> {
        self.grads.get(node.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf that was created with `requires_grad`; zero tensor
    /// if the leaf did not influence the root.
    pub fn wrt(&self, node: Node<'_>) -> Tensor {
        match self.get(node) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&node.shape()),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.recs.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Node<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Node<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: f64) -> Node<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Node<'_> {
        let mut recs = self.recs.borrow_mut();
        recs.push(Rec {
            value,
            op,
            requires_grad,
        });
        Node {
            graph: self,
            id: recs.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.recs.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.recs.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `root`. Every `requires_grad` leaf reachable
    /// from the root receives the total derivative of the root value.
    pub fn backward(&self, root: Node<'_>) -> Result<Gradients> {
        let recs = self.recs.borrow();
        let rec = &recs[root.id];
        if rec.value.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                shape: rec.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; recs.len()];
        grads[root.id] = Some(Tensor::full(rec.value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let rec = &recs[id];
            if !rec.requires_grad {
                continue;
            }
            let Some(grad) = grads[id].clone() else {
                continue;
            };
            match &rec.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.unbroadcast(recs[*a].value.shape()));
                    accumulate(&mut grads, *b, grad.unbroadcast(recs[*b].value.shape()));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, grad.unbroadcast(recs[*a].value.shape()));
                    accumulate(
                        &mut grads,
                        *b,
                        grad.scale(-1.0).unbroadcast(recs[*b].value.shape()),
                    );
                }
                Op::Mul(a, b) => {
                    let ga = grad.mul(&recs[*b].value)?;
                    let gb = grad.mul(&recs[*a].value)?;
                    accumulate(&mut grads, *a, ga.unbroadcast(recs[*a].value.shape()));
                    accumulate(&mut grads, *b, gb.unbroadcast(recs[*b].value.shape()));
                }
                Op::MatMul(a, b) => {
                    let ga = grad.matmul(&recs[*b].value.transpose()?)?;
                    let gb = recs[*a].value.transpose()?.matmul(&grad)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, *a, grad.mul(&rec.value)?);
                }
                Op::Log(a) => {
                    let ga = grad.broadcast_zip(&recs[*a].value, "log-grad", |g, x| g / x)?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = grad.broadcast_zip(&recs[*a].value, "softplus-grad", |g, x| {
                        g * sigmoid(x)
                    })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, grad.scale(*c));
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = grad.broadcast_zip(&recs[*a].value, "clamp-grad", |g, x| {
                        if x > lo && x < hi {
                            g
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let g = grad.scalar_value();
                    accumulate(&mut grads, *a, Tensor::full(recs[*a].value.shape(), g));
                }
                Op::SumLast(a) => {
                    accumulate(&mut grads, *a, grad.broadcast_to(recs[*a].value.shape())?);
                }
                Op::MaxLast(a, argmax) => {
                    let mut ga = Tensor::zeros(recs[*a].value.shape());
                    let k = *recs[*a].value.shape().last().unwrap();
                    for (row, &j) in argmax.iter().enumerate() {
                        ga.data_mut()[row * k + j] = grad.data()[row];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    // row-wise: dx = p * (g - <g, p>)
                    let p = &rec.value;
                    let k = *p.shape().last().unwrap();
                    let rows = p.numel() / k;
                    let mut ga = Tensor::zeros(p.shape());
                    for r in 0..rows {
                        let pr = &p.data()[r * k..(r + 1) * k];
                        let gr = &grad.data()[r * k..(r + 1) * k];
                        let dot: f64 = pr.iter().zip(gr).map(|(p, g)| p * g).sum();
                        for j in 0..k {
                            ga.data_mut()[r * k + j] = pr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let ga = grad.broadcast_zip(&recs[*a].value, "leaky-grad", |g, x| {
                        if x >= 0.0 {
                            g
                        } else {
                            g * s
                        }
                    })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Lgamma(a) => {
                    let ga = grad.broadcast_zip(&recs[*a].value, "lgamma-grad", |g, x| {
                        g * special::digamma(x)
                    })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Digamma(a) => {
                    let ga = grad.broadcast_zip(&recs[*a].value, "digamma-grad", |g, x| {
                        g * special::trigamma(x)
                    })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::DropoutMask(a, mask) => {
                    accumulate(&mut grads, *a, grad.mul(mask)?);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, delta: Tensor) {
    match &mut grads[id] {
        Some(g) => *g = g.add(&delta).expect("gradient shapes always match"),
        slot => *slot = Some(delta),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_positive(t: &Tensor, op: &'static str) -> Result<()> {
    for &v in t.data() {
        if !(v > 0.0) {
            return Err(AutodiffError::Domain { op, value: v });
        }
    }
    Ok(())
}

impl<'g> Node<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.recs.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    fn unary(&self, value: Tensor, op: Op) -> Node<'g> {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: Node<'g>, value: Tensor, op: Op) -> Node<'g> {
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(value, op, rg)
    }

    pub fn add(&self, other: Node<'g>) -> Result<Node<'g>> {
        let v = self.value().add(&other.value())?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Node<'g>) -> Result<Node<'g>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Node<'g>) -> Result<Node<'g>> {
        let v = self.value().mul(&other.value())?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn matmul(&self, other: Node<'g>) -> Result<Node<'g>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn exp(&self) -> Node<'g> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Node<'g>> {
        let val = self.value();
        check_positive(&val, "log")?;
        Ok(self.unary(val.map(f64::ln), Op::Log(self.id)))
    }

    /// Numerically stable ln(1 + e^x); the softplus head option.
    pub fn softplus(&self) -> Node<'g> {
        let v = self.value().map(|x| {
            if x > 0.0 {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            }
        });
        self.unary(v, Op::Softplus(self.id))
    }

    pub fn scale(&self, c: f64) -> Node<'g> {
        let v = self.value().scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Node<'g> {
        self.scale(-1.0)
    }

    /// Elementwise clamp; the subgradient is zero outside the open interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Node<'g> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.unary(v, Op::Clamp(self.id, lo, hi))
    }

    pub fn sum_all(&self) -> Node<'g> {
        let v = Tensor::scalar(self.value().sum_all());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean_all(&self) -> Node<'g> {
        let n = self.value().numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub fn sum_last(&self) -> Result<Node<'g>> {
        let v = self.value().sum_last()?;
        Ok(self.unary(v, Op::SumLast(self.id)))
    }

    /// Max over the last axis; ties route the subgradient to the first argmax.
    pub fn max_last(&self) -> Result<Node<'g>> {
        let (v, argmax) = self.value().max_last()?;
        Ok(self.unary(v, Op::MaxLast(self.id, argmax)))
    }

    /// Softmax over the last axis, stabilized by row-max subtraction.
    pub fn softmax(&self) -> Result<Node<'g>> {
        let val = self.value();
        let k = *val
            .shape()
            .last()
            .ok_or(ShapeError::NoLastAxis { op: "softmax" })?;
        let rows = val.numel() / k;
        let mut out = Tensor::zeros(val.shape());
        for r in 0..rows {
            let row = &val.data()[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..k {
                let e = (row[j] - m).exp();
                out.data_mut()[r * k + j] = e;
                z += e;
            }
            for j in 0..k {
                out.data_mut()[r * k + j] /= z;
            }
        }
        Ok(self.unary(out, Op::Softmax(self.id)))
    }

    pub fn leaky_relu(&self, slope: f64) -> Node<'g> {
        let v = self.value().map(|x| if x >= 0.0 { x } else { slope * x });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn lgamma(&self) -> Result<Node<'g>> {
        let val = self.value();
        check_positive(&val, "lgamma")?;
        Ok(self.unary(val.map(special::ln_gamma), Op::Lgamma(self.id)))
    }

    pub fn digamma(&self) -> Result<Node<'g>> {
        let val = self.value();
        check_positive(&val, "digamma")?;
        Ok(self.unary(val.map(special::digamma), Op::Digamma(self.id)))
    }

    /// Apply a precomputed dropout mask (already scaled by 1/keep).
    pub fn dropout_mask(&self, mask: &Tensor) -> Result<Node<'g>> {
        let v = self.value().mul(mask)?;
        Ok(self.unary(v, Op::DropoutMask(self.id, mask.clone())))
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.graph.backward(*self)
    }
}
