//! Minimal reverse-mode gradient engine.
//!
//! A [`Tape`] records operations as they execute (define-by-run); the tape is
//! rebuilt on every forward pass. [`Tensor`] is a copyable handle into the
//! tape; values and gradients live in the tape's node storage and are read
//! back through [`Tape::value`] / [`Tape::grad`] after [`Tape::backward`].
//!
//! Besides the usual elementwise/reduction primitives this tape has fused
//! nodes for the network's hot paths: the time-window weight function, the
//! per-shift weighted max over a padded robustness vector, and the columnwise
//! averaged minmax. Their backward rules delegate to the gradient helpers in
//! [`crate::maxops`] so values and derivatives share one implementation.
//!
//! Kink conventions, fixed for determinism: `relu'(0) = 0`, `clip'` is zero
//! outside the open interval (0, 1), hard min/max route all gradient to the
//! first attaining index, and sorting is stable descending.

use crate::maxops::{self, MaxKind, MaxMethod, MaxOpError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("backward root must be a scalar")]
    NonScalarRoot,
    #[error(transparent)]
    MaxOp(#[from] MaxOpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Neg(Tensor),
    Exp(Tensor),
    Relu(Tensor),
    Clip(Tensor),
    MlDraw {
        p: Tensor,
        x0: f64,
        x1: f64,
    },
    Sum(Tensor),
    MinRed(Tensor),
    MaxRed(Tensor),
    WeightedSum(Tensor, Tensor),
    SortDesc {
        x: Tensor,
        perm: Vec<usize>,
    },
    Index {
        x: Tensor,
        at: usize,
    },
    Stack(Vec<Tensor>),
    PadMin {
        x: Tensor,
        argmin: usize,
    },
    TimeFunction {
        t1: Tensor,
        t2: Tensor,
        eta: f64,
        len: usize,
    },
    LinearPredicate {
        signal: Tensor,
        a: Tensor,
        b: Tensor,
    },
    Bimodal(Tensor),
    HardMax {
        x: Tensor,
        w: Tensor,
    },
    Softmax {
        x: Tensor,
        w: Tensor,
        beta: f64,
    },
    SparseSoftmax {
        x: Tensor,
        w: Tensor,
        beta: f64,
        h: f64,
    },
    AveragedMax {
        x: Tensor,
        p: Tensor,
    },
    AveragedMinmax {
        x: Tensor,
        p: Tensor,
        pk: Tensor,
    },
    WindowedMax {
        padded: Tensor,
        w: Tensor,
        method: MaxMethod,
    },
    AveragedMinmaxCols {
        rows: Tensor,
        p: Tensor,
        pk: Tensor,
    },
}

struct Node {
    shape: Shape,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn relu_deriv(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, shape: Shape, value: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(shape.size(), value.len());
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            shape,
            value,
            grad,
            op,
        });
        Tensor(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Tensor {
        self.push(Shape::Scalar, vec![v], Op::Leaf)
    }

    pub fn vector(&mut self, v: Vec<f64>) -> Tensor {
        let n = v.len();
        self.push(Shape::Vector(n), v, Op::Leaf)
    }

    pub fn matrix(&mut self, v: Vec<f64>, rows: usize, cols: usize) -> Tensor {
        assert_eq!(v.len(), rows * cols);
        self.push(Shape::Matrix(rows, cols), v, Op::Leaf)
    }

    pub fn shape(&self, t: Tensor) -> Shape {
        self.nodes[t.0].shape
    }

    pub fn value(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.0].value
    }

    pub fn scalar_value(&self, t: Tensor) -> f64 {
        debug_assert_eq!(self.nodes[t.0].shape, Shape::Scalar);
        self.nodes[t.0].value[0]
    }

    pub fn grad(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.0].grad
    }

    pub fn scalar_grad(&self, t: Tensor) -> f64 {
        self.nodes[t.0].grad[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ----- elementwise with scalar broadcast -----

    fn broadcast_shape(&self, a: Tensor, b: Tensor, what: &str) -> Result<Shape, AdError> {
        let (sa, sb) = (self.nodes[a.0].shape, self.nodes[b.0].shape);
        match (sa, sb) {
            _ if sa == sb => Ok(sa),
            (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
            _ => Err(AdError::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}"))),
        }
    }

    fn binary(
        &mut self,
        a: Tensor,
        b: Tensor,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Tensor, AdError> {
        let shape = self.broadcast_shape(a, b, what)?;
        let n = shape.size();
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value: Vec<f64> = (0..n)
            .map(|i| f(va[i % va.len()], vb[i % vb.len()]))
            .collect();
        Ok(self.push(shape, value, op))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        if self.nodes[b.0].value.contains(&0.0) {
            return Err(AdError::DivisionByZero);
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Tensor) -> Tensor {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&v| -v).collect();
        self.push(node.shape, value, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Tensor) -> Tensor {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&v| v.exp()).collect();
        self.push(node.shape, value, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&v| v.max(0.0)).collect();
        self.push(node.shape, value, Op::Relu(a))
    }

    /// clip(x): 1 for x >= 1, 0 for x <= 0, identity in between.
    pub fn clip(&mut self, a: Tensor) -> Tensor {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
        self.push(node.shape, value, Op::Clip(a))
    }

    /// Maximum-likelihood draw from {x0, x1}: x0 where p >= 0.5, else x1.
    /// Straight-through backward: grad_p = (x0 - x1) * upstream.
    pub fn ml_draw(&mut self, p: Tensor, x0: f64, x1: f64) -> Tensor {
        let node = &self.nodes[p.0];
        let value = node
            .value
            .iter()
            .map(|&v| if v >= 0.5 { x0 } else { x1 })
            .collect();
        self.push(node.shape, value, Op::MlDraw { p, x0, x1 })
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let v = self.nodes[a.0].value.iter().sum();
        self.push(Shape::Scalar, vec![v], Op::Sum(a))
    }

    pub fn min(&mut self, a: Tensor) -> Tensor {
        let v = self.nodes[a.0]
            .value
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        self.push(Shape::Scalar, vec![v], Op::MinRed(a))
    }

    pub fn max(&mut self, a: Tensor) -> Tensor {
        let v = self.nodes[a.0]
            .value
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.push(Shape::Scalar, vec![v], Op::MaxRed(a))
    }

    /// Dot product of two equal-length vectors.
    pub fn weighted_sum(&mut self, x: Tensor, q: Tensor) -> Result<Tensor, AdError> {
        let (sx, sq) = (self.nodes[x.0].shape, self.nodes[q.0].shape);
        if sx != sq {
            return Err(AdError::ShapeMismatch(format!(
                "weighted_sum: {sx:?} vs {sq:?}"
            )));
        }
        let v = self.nodes[x.0]
            .value
            .iter()
            .zip(&self.nodes[q.0].value)
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Shape::Scalar, vec![v], Op::WeightedSum(x, q)))
    }

    /// Stable descending sort of a vector; also returns the permutation such
    /// that `out[i] = x[perm[i]]`.
    pub fn sort_desc(&mut self, x: Tensor) -> (Tensor, Vec<usize>) {
        let xs = &self.nodes[x.0].value;
        let mut perm: Vec<usize> = (0..xs.len()).collect();
        perm.sort_by(|&i, &j| xs[j].partial_cmp(&xs[i]).expect("NaN in sort"));
        let value: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
        let shape = self.nodes[x.0].shape;
        let t = self.push(
            shape,
            value,
            Op::SortDesc {
                x,
                perm: perm.clone(),
            },
        );
        (t, perm)
    }

    pub fn index(&mut self, x: Tensor, at: usize) -> Tensor {
        let v = self.nodes[x.0].value[at];
        self.push(Shape::Scalar, vec![v], Op::Index { x, at })
    }

    /// Stack equal-length vectors into a matrix, one row per input.
    pub fn stack(&mut self, rows: &[Tensor]) -> Result<Tensor, AdError> {
        assert!(!rows.is_empty());
        let len = match self.nodes[rows[0].0].shape {
            Shape::Vector(l) => l,
            s => return Err(AdError::ShapeMismatch(format!("stack of {s:?}"))),
        };
        let mut value = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            if self.nodes[r.0].shape != Shape::Vector(len) {
                return Err(AdError::ShapeMismatch("stack rows differ in length".into()));
            }
            value.extend_from_slice(&self.nodes[r.0].value);
        }
        Ok(self.push(
            Shape::Matrix(rows.len(), len),
            value,
            Op::Stack(rows.to_vec()),
        ))
    }

    /// Extend a robustness vector of length l with l-1 copies of its minimum.
    pub fn pad_min(&mut self, x: Tensor) -> Tensor {
        let xs = &self.nodes[x.0].value;
        let l = xs.len();
        let mut argmin = 0;
        for i in 1..l {
            if xs[i] < xs[argmin] {
                argmin = i;
            }
        }
        let mut value = xs.clone();
        value.extend(std::iter::repeat_n(xs[argmin], l - 1));
        self.push(Shape::Vector(2 * l - 1), value, Op::PadMin { x, argmin })
    }

    /// Differentiable window weights over `len` time steps: 1 on [t1, t2],
    /// ramping to 0 over `eta` steps on either side.
    pub fn time_function(&mut self, t1: Tensor, t2: Tensor, eta: f64, len: usize) -> Tensor {
        assert!(eta > 0.0);
        let a1 = self.scalar_value(t1);
        let a2 = self.scalar_value(t2);
        let value: Vec<f64> = (0..len)
            .map(|t| {
                let t = t as f64;
                let left = (t - a1 + eta).max(0.0) - (t - a1).max(0.0);
                let right = (a2 - t + eta).max(0.0) - (a2 - t).max(0.0);
                left.min(right) / eta
            })
            .collect();
        self.push(
            Shape::Vector(len),
            value,
            Op::TimeFunction { t1, t2, eta, len },
        )
    }

    /// Robustness vector of a linear predicate: out[t] = a . s(:, t) - b.
    pub fn linear_predicate(
        &mut self,
        signal: Tensor,
        a: Tensor,
        b: Tensor,
    ) -> Result<Tensor, AdError> {
        let (d, l) = match self.nodes[signal.0].shape {
            Shape::Matrix(d, l) => (d, l),
            s => {
                return Err(AdError::ShapeMismatch(format!(
                    "signal must be a matrix, got {s:?}"
                )))
            }
        };
        if self.nodes[a.0].shape != Shape::Vector(d) {
            return Err(AdError::ShapeMismatch(format!(
                "predicate weights {:?} vs signal dim {d}",
                self.nodes[a.0].shape
            )));
        }
        let sv = &self.nodes[signal.0].value;
        let av = &self.nodes[a.0].value;
        let bv = self.nodes[b.0].value[0];
        let value: Vec<f64> = (0..l)
            .map(|t| {
                let mut acc = 0.0;
                for (j, &aj) in av.iter().enumerate() {
                    acc += aj * sv[j * l + t];
                }
                acc - bv
            })
            .collect();
        Ok(self.push(
            Shape::Vector(l),
            value,
            Op::LinearPredicate { signal, a, b },
        ))
    }

    /// Bi-modal penalty sum p_i (1 - p_i); zero exactly at binary p.
    pub fn bimodal(&mut self, p: Tensor) -> Tensor {
        let v = self.nodes[p.0].value.iter().map(|&x| x * (1.0 - x)).sum();
        self.push(Shape::Scalar, vec![v], Op::Bimodal(p))
    }

    // ----- max-operation nodes -----

    pub fn hard_max(&mut self, x: Tensor, w: Tensor) -> Result<Tensor, AdError> {
        let v = maxops::hard_max(&self.nodes[x.0].value, &self.nodes[w.0].value)?;
        Ok(self.push(Shape::Scalar, vec![v], Op::HardMax { x, w }))
    }

    pub fn softmax(&mut self, x: Tensor, w: Tensor, beta: f64) -> Result<Tensor, AdError> {
        let v = maxops::softmax_approx(&self.nodes[x.0].value, &self.nodes[w.0].value, beta)?.value;
        Ok(self.push(Shape::Scalar, vec![v], Op::Softmax { x, w, beta }))
    }

    pub fn sparse_softmax(
        &mut self,
        x: Tensor,
        w: Tensor,
        beta: f64,
        h: f64,
    ) -> Result<Tensor, AdError> {
        let v =
            maxops::sparse_softmax(&self.nodes[x.0].value, &self.nodes[w.0].value, beta, h)?.value;
        Ok(self.push(Shape::Scalar, vec![v], Op::SparseSoftmax { x, w, beta, h }))
    }

    pub fn averaged_max(&mut self, x: Tensor, p: Tensor) -> Result<Tensor, AdError> {
        let v = maxops::averaged_max(&self.nodes[x.0].value, &self.nodes[p.0].value)?;
        Ok(self.push(Shape::Scalar, vec![v], Op::AveragedMax { x, p }))
    }

    pub fn averaged_minmax(&mut self, x: Tensor, p: Tensor, pk: Tensor) -> Result<Tensor, AdError> {
        let v = maxops::averaged_minmax(
            &self.nodes[x.0].value,
            &self.nodes[p.0].value,
            self.scalar_value(pk),
        )?;
        Ok(self.push(Shape::Scalar, vec![v], Op::AveragedMinmax { x, p, pk }))
    }

    /// Sliding weighted max: out[t] = M(padded[t..t+l], w) for t in 0..l,
    /// where l = w.len() and padded has length 2l-1.
    pub fn windowed_max(
        &mut self,
        padded: Tensor,
        w: Tensor,
        method: MaxMethod,
    ) -> Result<Tensor, AdError> {
        let l = match self.nodes[w.0].shape {
            Shape::Vector(l) => l,
            s => {
                return Err(AdError::ShapeMismatch(format!(
                    "weights must be a vector, got {s:?}"
                )))
            }
        };
        if self.nodes[padded.0].shape != Shape::Vector(2 * l - 1) {
            return Err(AdError::ShapeMismatch(format!(
                "padded vector {:?} vs expected length {}",
                self.nodes[padded.0].shape,
                2 * l - 1
            )));
        }
        let pv = &self.nodes[padded.0].value;
        let wv = &self.nodes[w.0].value;
        let mut value = Vec::with_capacity(l);
        for t in 0..l {
            let win = &pv[t..t + l];
            let v = match method.kind {
                MaxKind::Hard => maxops::hard_max(win, wv)?,
                MaxKind::Softmax => maxops::softmax_approx(win, wv, method.beta)?.value,
                MaxKind::SparseSoftmax => {
                    maxops::sparse_softmax(win, wv, method.beta, method.h)?.value
                }
                MaxKind::AveragedMax => maxops::averaged_max(win, wv)?,
            };
            value.push(v);
        }
        Ok(self.push(
            Shape::Vector(l),
            value,
            Op::WindowedMax { padded, w, method },
        ))
    }

    /// Columnwise averaged minmax over a stack of robustness vectors:
    /// out[t] = averaged_minmax(rows[:, t], p, pk).
    pub fn averaged_minmax_cols(
        &mut self,
        rows: Tensor,
        p: Tensor,
        pk: Tensor,
    ) -> Result<Tensor, AdError> {
        let (n, l) = match self.nodes[rows.0].shape {
            Shape::Matrix(n, l) => (n, l),
            s => {
                return Err(AdError::ShapeMismatch(format!(
                    "expected matrix, got {s:?}"
                )))
            }
        };
        if self.nodes[p.0].shape != Shape::Vector(n) {
            return Err(AdError::ShapeMismatch(format!(
                "gate vector {:?} vs {n} rows",
                self.nodes[p.0].shape
            )));
        }
        let rv = &self.nodes[rows.0].value;
        let pv = &self.nodes[p.0].value;
        let pkv = self.scalar_value(pk);
        let mut col = vec![0.0; n];
        let mut value = Vec::with_capacity(l);
        for t in 0..l {
            for i in 0..n {
                col[i] = rv[i * l + t];
            }
            value.push(maxops::averaged_minmax(&col, pv, pkv)?);
        }
        Ok(self.push(
            Shape::Vector(l),
            value,
            Op::AveragedMinmaxCols { rows, p, pk },
        ))
    }

    // ----- backward -----

    /// Reverse sweep from a scalar root; every reachable node receives
    /// d(root)/d(node) in its grad buffer. Gradients accumulate, so a node
    /// used k times collects k contributions.
    pub fn backward(&mut self, root: Tensor) -> Result<(), AdError> {
        if self.nodes[root.0].shape != Shape::Scalar {
            return Err(AdError::NonScalarRoot);
        }
        self.nodes[root.0].grad[0] = 1.0;
        for id in (0..=root.0).rev() {
            let op = self.nodes[id].op.clone();
            let g = std::mem::take(&mut self.nodes[id].grad);
            self.step_back(id, &op, &g)?;
            self.nodes[id].grad = g;
        }
        Ok(())
    }

    fn add_broadcast(&mut self, parent: Tensor, contrib: impl Fn(usize) -> f64, out_len: usize) {
        let pg = &mut self.nodes[parent.0].grad;
        if pg.len() == out_len {
            for (i, slot) in pg.iter_mut().enumerate() {
                *slot += contrib(i);
            }
        } else {
            // scalar broadcast against a vector output
            debug_assert_eq!(pg.len(), 1);
            let mut acc = 0.0;
            for i in 0..out_len {
                acc += contrib(i);
            }
            pg[0] += acc;
        }
    }

    fn step_back(&mut self, id: usize, op: &Op, g: &[f64]) -> Result<(), AdError> {
        let n = g.len();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_broadcast(a, |i| g[i], n);
                self.add_broadcast(b, |i| g[i], n);
            }
            Op::Sub(a, b) => {
                self.add_broadcast(a, |i| g[i], n);
                self.add_broadcast(b, |i| -g[i], n);
            }
            Op::Mul(a, b) => {
                let bv = self.nodes[b.0].value.clone();
                let av = self.nodes[a.0].value.clone();
                self.add_broadcast(a, |i| g[i] * bv[i % bv.len()], n);
                self.add_broadcast(b, |i| g[i] * av[i % av.len()], n);
            }
            Op::Div(a, b) => {
                let bv = self.nodes[b.0].value.clone();
                let av = self.nodes[a.0].value.clone();
                self.add_broadcast(a, |i| g[i] / bv[i % bv.len()], n);
                self.add_broadcast(
                    b,
                    |i| {
                        let bb = bv[i % bv.len()];
                        -g[i] * av[i % av.len()] / (bb * bb)
                    },
                    n,
                );
            }
            Op::Neg(a) => self.add_broadcast(a, |i| -g[i], n),
            Op::Exp(a) => {
                let out = self.nodes[id].value.clone();
                self.add_broadcast(a, |i| g[i] * out[i], n);
            }
            Op::Relu(a) => {
                let av = self.nodes[a.0].value.clone();
                self.add_broadcast(a, |i| g[i] * relu_deriv(av[i]), n);
            }
            Op::Clip(a) => {
                let av = self.nodes[a.0].value.clone();
                self.add_broadcast(
                    a,
                    |i| {
                        if av[i] > 0.0 && av[i] < 1.0 {
                            g[i]
                        } else {
                            0.0
                        }
                    },
                    n,
                );
            }
            Op::MlDraw { p, x0, x1 } => {
                self.add_broadcast(p, |i| g[i] * (x0 - x1), n);
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                self.add_broadcast(a, |_| g[0], len);
            }
            Op::MinRed(a) | Op::MaxRed(a) => {
                let av = &self.nodes[a.0].value;
                let is_min = matches!(op, Op::MinRed(_));
                let mut k = 0;
                for i in 1..av.len() {
                    let better = if is_min { av[i] < av[k] } else { av[i] > av[k] };
                    if better {
                        k = i;
                    }
                }
                self.nodes[a.0].grad[k] += g[0];
            }
            Op::WeightedSum(x, q) => {
                let qv = self.nodes[q.0].value.clone();
                let xv = self.nodes[x.0].value.clone();
                for (slot, v) in self.nodes[x.0].grad.iter_mut().zip(&qv) {
                    *slot += g[0] * v;
                }
                for (slot, v) in self.nodes[q.0].grad.iter_mut().zip(&xv) {
                    *slot += g[0] * v;
                }
            }
            Op::SortDesc { x, ref perm } => {
                for (i, &src) in perm.iter().enumerate() {
                    self.nodes[x.0].grad[src] += g[i];
                }
            }
            Op::Index { x, at } => {
                self.nodes[x.0].grad[at] += g[0];
            }
            Op::Stack(ref rows) => {
                let len = n / rows.len();
                for (r, &row) in rows.iter().enumerate() {
                    for (slot, v) in self.nodes[row.0].grad.iter_mut().zip(&g[r * len..]) {
                        *slot += v;
                    }
                }
            }
            Op::PadMin { x, argmin } => {
                let l = self.nodes[x.0].value.len();
                for (slot, v) in self.nodes[x.0].grad.iter_mut().zip(&g[..l]) {
                    *slot += v;
                }
                let tail: f64 = g[l..].iter().sum();
                self.nodes[x.0].grad[argmin] += tail;
            }
            Op::TimeFunction { t1, t2, eta, len } => {
                let a1 = self.nodes[t1.0].value[0];
                let a2 = self.nodes[t2.0].value[0];
                let mut g1 = 0.0;
                let mut g2 = 0.0;
                for (t, &gt) in g.iter().enumerate().take(len) {
                    let t = t as f64;
                    let left = (t - a1 + eta).max(0.0) - (t - a1).max(0.0);
                    let right = (a2 - t + eta).max(0.0) - (a2 - t).max(0.0);
                    if left <= right {
                        // w = left / eta, which only depends on t1
                        let d = (-relu_deriv(t - a1 + eta) + relu_deriv(t - a1)) / eta;
                        g1 += gt * d;
                    } else {
                        let d = (relu_deriv(a2 - t + eta) - relu_deriv(a2 - t)) / eta;
                        g2 += gt * d;
                    }
                }
                self.nodes[t1.0].grad[0] += g1;
                self.nodes[t2.0].grad[0] += g2;
            }
            Op::LinearPredicate { signal, a, b } => {
                let (d, l) = match self.nodes[signal.0].shape {
                    Shape::Matrix(d, l) => (d, l),
                    _ => unreachable!(),
                };
                let sv = self.nodes[signal.0].value.clone();
                let av = self.nodes[a.0].value.clone();
                for j in 0..d {
                    let mut acc = 0.0;
                    for t in 0..l {
                        acc += g[t] * sv[j * l + t];
                        self.nodes[signal.0].grad[j * l + t] += g[t] * av[j];
                    }
                    self.nodes[a.0].grad[j] += acc;
                }
                self.nodes[b.0].grad[0] -= g.iter().sum::<f64>();
            }
            Op::Bimodal(p) => {
                let pv = self.nodes[p.0].value.clone();
                for (slot, v) in self.nodes[p.0].grad.iter_mut().zip(&pv) {
                    *slot += g[0] * (1.0 - 2.0 * v);
                }
            }
            Op::HardMax { x, w } => {
                let k = maxops::hard_max_index(&self.nodes[x.0].value, &self.nodes[w.0].value)
                    .expect("checked at creation");
                self.nodes[x.0].grad[k] += g[0];
            }
            Op::Softmax { x, w, beta } => {
                let (gx, gw) = maxops::softmax_vjp(
                    &self.nodes[x.0].value,
                    &self.nodes[w.0].value,
                    beta,
                    g[0],
                )?;
                for (slot, v) in self.nodes[x.0].grad.iter_mut().zip(&gx) {
                    *slot += v;
                }
                for (slot, v) in self.nodes[w.0].grad.iter_mut().zip(&gw) {
                    *slot += v;
                }
            }
            Op::SparseSoftmax { x, w, beta, h } => {
                let (gx, gw) = maxops::sparse_softmax_vjp(
                    &self.nodes[x.0].value,
                    &self.nodes[w.0].value,
                    beta,
                    h,
                    g[0],
                )?;
                for (slot, v) in self.nodes[x.0].grad.iter_mut().zip(&gx) {
                    *slot += v;
                }
                for (slot, v) in self.nodes[w.0].grad.iter_mut().zip(&gw) {
                    *slot += v;
                }
            }
            Op::AveragedMax { x, p } => {
                let (_, gx, gp) =
                    maxops::averaged_max_grads(&self.nodes[x.0].value, &self.nodes[p.0].value);
                for (slot, v) in self.nodes[x.0].grad.iter_mut().zip(&gx) {
                    *slot += g[0] * v;
                }
                for (slot, v) in self.nodes[p.0].grad.iter_mut().zip(&gp) {
                    *slot += g[0] * v;
                }
            }
            Op::AveragedMinmax { x, p, pk } => {
                let (_, gx, gp, gpk) = maxops::averaged_minmax_grads(
                    &self.nodes[x.0].value,
                    &self.nodes[p.0].value,
                    self.nodes[pk.0].value[0],
                );
                for (slot, v) in self.nodes[x.0].grad.iter_mut().zip(&gx) {
                    *slot += g[0] * v;
                }
                for (slot, v) in self.nodes[p.0].grad.iter_mut().zip(&gp) {
                    *slot += g[0] * v;
                }
                self.nodes[pk.0].grad[0] += g[0] * gpk;
            }
            Op::WindowedMax { padded, w, method } => {
                let l = n;
                let pv = self.nodes[padded.0].value.clone();
                let wv = self.nodes[w.0].value.clone();
                for (t, &gt) in g.iter().enumerate().take(l) {
                    if gt == 0.0 {
                        continue;
                    }
                    let win = &pv[t..t + l];
                    match method.kind {
                        MaxKind::Hard => {
                            let k = maxops::hard_max_index(win, &wv).expect("checked at creation");
                            self.nodes[padded.0].grad[t + k] += gt;
                        }
                        MaxKind::Softmax => {
                            let (gx, gw) = maxops::softmax_vjp(win, &wv, method.beta, gt)?;
                            for (i, v) in gx.iter().enumerate() {
                                self.nodes[padded.0].grad[t + i] += v;
                            }
                            for (slot, v) in self.nodes[w.0].grad.iter_mut().zip(&gw) {
                                *slot += v;
                            }
                        }
                        MaxKind::SparseSoftmax => {
                            let (gx, gw) =
                                maxops::sparse_softmax_vjp(win, &wv, method.beta, method.h, gt)?;
                            for (i, v) in gx.iter().enumerate() {
                                self.nodes[padded.0].grad[t + i] += v;
                            }
                            for (slot, v) in self.nodes[w.0].grad.iter_mut().zip(&gw) {
                                *slot += v;
                            }
                        }
                        MaxKind::AveragedMax => {
                            let (_, gx, gp) = maxops::averaged_max_grads(win, &wv);
                            for (i, v) in gx.iter().enumerate() {
                                self.nodes[padded.0].grad[t + i] += gt * v;
                            }
                            for (slot, v) in self.nodes[w.0].grad.iter_mut().zip(&gp) {
                                *slot += gt * v;
                            }
                        }
                    }
                }
            }
            Op::AveragedMinmaxCols { rows, p, pk } => {
                let (rows_n, l) = match self.nodes[rows.0].shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                let rv = self.nodes[rows.0].value.clone();
                let pv = self.nodes[p.0].value.clone();
                let pkv = self.nodes[pk.0].value[0];
                let mut col = vec![0.0; rows_n];
                for (t, &gt) in g.iter().enumerate().take(l) {
                    if gt == 0.0 {
                        continue;
                    }
                    for i in 0..rows_n {
                        col[i] = rv[i * l + t];
                    }
                    let (_, gx, gp, gpk) = maxops::averaged_minmax_grads(&col, &pv, pkv);
                    for (i, v) in gx.iter().enumerate() {
                        self.nodes[rows.0].grad[i * l + t] += gt * v;
                    }
                    for (slot, v) in self.nodes[p.0].grad.iter_mut().zip(&gp) {
                        *slot += gt * v;
                    }
                    self.nodes[pk.0].grad[0] += gt * gpk;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn assert_close(analytic: f64, fd: f64) {
        let scale = analytic.abs().max(fd.abs()).max(1.0);
        assert!(
            (analytic - fd).abs() / scale <= 1e-4,
            "analytic {analytic} vs finite difference {fd}"
        );
    }

    #[test]
    fn product_gradients() {
        let mut t = Tape::new();
        let x = t.scalar(2.0);
        let y = t.scalar(3.0);
        let z = t.mul(x, y).unwrap();
        t.backward(z).unwrap();
        assert_eq!(t.scalar_grad(x), 3.0);
        assert_eq!(t.scalar_grad(y), 2.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, -2.0, 3.0]);
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diamond_reuse_accumulates() {
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.add(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.scalar_value(y), 6.0);
        assert_eq!(t.scalar_grad(x), 2.0);
    }

    #[test]
    fn chain_rule_through_exp_div() {
        // f(x) = exp(x) / (x + 2), checked against central differences.
        let eval = |v: f64| {
            let mut t = Tape::new();
            let x = t.scalar(v);
            let e = t.exp(x);
            let two = t.scalar(2.0);
            let den = t.add(x, two).unwrap();
            let f = t.div(e, den).unwrap();
            (t, x, f)
        };
        let (mut t, x, f) = eval(0.7);
        t.backward(f).unwrap();
        let fd = fd_scalar(
            |v| {
                let (t, _, f) = eval(v);
                t.scalar_value(f)
            },
            0.7,
        );
        assert_close(t.scalar_grad(x), fd);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let mut t = Tape::new();
        let x = t.scalar(1.0);
        let z = t.scalar(0.0);
        assert!(matches!(t.div(x, z), Err(AdError::DivisionByZero)));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0]);
        let y = t.vector(vec![1.0, 2.0, 3.0]);
        assert!(t.add(x, y).is_err());
    }

    #[test]
    fn relu_and_clip_kinks() {
        let mut t = Tape::new();
        let x = t.vector(vec![2.0, -1.0, 0.0]);
        let r = t.relu(x);
        let s = t.sum(r);
        t.backward(s).unwrap();
        assert_eq!(t.value(r), &[2.0, 0.0, 0.0]);
        assert_eq!(t.grad(x), &[1.0, 0.0, 0.0]);

        let mut t = Tape::new();
        let x = t.vector(vec![1.5, -0.2, 0.3, 1.0, 0.0]);
        let c = t.clip(x);
        let s = t.sum(c);
        t.backward(s).unwrap();
        assert_eq!(t.value(c), &[1.0, 0.0, 0.3, 1.0, 0.0]);
        assert_eq!(t.grad(x), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn ml_draw_forward_and_straight_through() {
        let mut t = Tape::new();
        let p = t.vector(vec![0.7, 0.3, 0.5]);
        let k = t.ml_draw(p, 1.0, -1.0);
        assert_eq!(t.value(k), &[1.0, -1.0, 1.0], "0.5 belongs to x0");
        let c = t.vector(vec![2.0, 5.0, -3.0]);
        let prod = t.mul(k, c).unwrap();
        let s = t.sum(prod);
        t.backward(s).unwrap();
        // declared straight-through value: (x0 - x1) * upstream = 2 * c
        assert_eq!(t.grad(p), &[4.0, 10.0, -6.0]);

        let mut t = Tape::new();
        let p = t.vector(vec![0.3, 0.9]);
        let w = t.ml_draw(p, 1.0, 0.0);
        assert_eq!(t.value(w), &[0.0, 1.0]);
        let s = t.sum(w);
        t.backward(s).unwrap();
        assert_eq!(
            t.grad(p),
            &[1.0, 1.0],
            "gate draw has unit straight-through slope"
        );
    }

    #[test]
    fn hard_minmax_route_to_first_attaining() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 3.0, 3.0, 0.5]);
        let m = t.max(x);
        t.backward(m).unwrap();
        assert_eq!(t.grad(x), &[0.0, 1.0, 0.0, 0.0]);

        let mut t = Tape::new();
        let x = t.vector(vec![2.0, 0.5, 0.5]);
        let m = t.min(x);
        t.backward(m).unwrap();
        assert_eq!(t.grad(x), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sort_is_stable_and_scatters_gradient() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 3.0, 2.0]);
        let (sorted, perm) = t.sort_desc(x);
        assert_eq!(t.value(sorted), &[3.0, 2.0, 1.0]);
        assert_eq!(perm, vec![1, 2, 0]);

        // duplicates keep original order
        let mut t = Tape::new();
        let x = t.vector(vec![2.0, 5.0, 2.0]);
        let (_, perm) = t.sort_desc(x);
        assert_eq!(perm, vec![1, 0, 2]);

        // gradient of sum of sorted is all-ones regardless of permutation
        let mut t = Tape::new();
        let x = t.vector(vec![0.3, -1.0, 0.9, 0.3]);
        let (sorted, _) = t.sort_desc(x);
        let s = t.sum(sorted);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn weighted_sum_gradients() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0]);
        let q = t.vector(vec![0.25, 0.75]);
        let s = t.weighted_sum(x, q).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.scalar_value(s), 1.75);
        assert_eq!(t.grad(x), &[0.25, 0.75]);
        assert_eq!(t.grad(q), &[1.0, 2.0]);
    }

    #[test]
    fn pad_min_routes_tail_gradient_to_argmin() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0, 3.0]);
        let p = t.pad_min(x);
        assert_eq!(t.value(p), &[1.0, 2.0, 3.0, 1.0, 1.0]);
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), &[3.0, 1.0, 1.0]);
    }

    #[test]
    fn time_function_values_and_ramps() {
        let mut t = Tape::new();
        let t1 = t.scalar(4.0);
        let t2 = t.scalar(8.0);
        let expected = [
            0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        ];
        // exactly representable slopes give the binary vector bit-exactly
        for eta in [1.0, 0.5] {
            let w = t.time_function(t1, t2, eta, 13);
            assert_eq!(t.value(w), &expected, "eta={eta}");
        }
        // eta = 0.1 is not exactly representable; interior stays within 1 ulp-ish
        let w = t.time_function(t1, t2, 0.1, 13);
        for (got, want) in t.value(w).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        // full window is all ones
        let t1 = t.scalar(0.0);
        let t2 = t.scalar(12.0);
        let w = t.time_function(t1, t2, 0.5, 13);
        assert!(t.value(w).iter().all(|&v| v == 1.0));
        // fractional bound: linear ramp value at the floor index
        let t1 = t.scalar(3.5);
        let t2 = t.scalar(9.0);
        let w = t.time_function(t1, t2, 1.0, 13);
        assert!((t.value(w)[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn time_function_gradient_lives_on_the_ramps() {
        let eval = |a1: f64, a2: f64| {
            let mut t = Tape::new();
            let t1 = t.scalar(a1);
            let t2 = t.scalar(a2);
            let w = t.time_function(t1, t2, 0.5, 12);
            // weight the entries so each ramp contributes distinctly
            let coef = t.vector((0..12).map(|i| (i as f64 + 1.0) * 0.3).collect());
            let s = t.weighted_sum(w, coef).unwrap();
            (t, t1, t2, s)
        };
        let (a1, a2) = (3.3, 7.6);
        let (mut t, t1, t2, s) = eval(a1, a2);
        t.backward(s).unwrap();
        let g1 = t.scalar_grad(t1);
        let g2 = t.scalar_grad(t2);
        let fd1 = fd_scalar(
            |v| {
                let (t, _, _, s) = eval(v, a2);
                t.scalar_value(s)
            },
            a1,
        );
        let fd2 = fd_scalar(
            |v| {
                let (t, _, _, s) = eval(a1, v);
                t.scalar_value(s)
            },
            a2,
        );
        assert_close(g1, fd1);
        assert_close(g2, fd2);
        assert!(g1 != 0.0 && g2 != 0.0);
    }

    #[test]
    fn linear_predicate_matches_columnwise() {
        let mut t = Tape::new();
        // 2x3 signal, a = [-1, 0.5], b = -0.1
        let s = t.matrix(vec![1.0, 2.0, 3.0, 0.5, 0.0, -0.5], 2, 3);
        let a = t.vector(vec![-1.0, 0.5]);
        let b = t.scalar(-0.1);
        let rv = t.linear_predicate(s, a, b).unwrap();
        assert_eq!(t.value(rv), &[-0.65, -1.9, -3.15]);
        let coef = t.vector(vec![1.0, 2.0, 3.0]);
        let loss = t.weighted_sum(rv, coef).unwrap();
        t.backward(loss).unwrap();
        // d/da_j = sum_t g_t s[j,t]; d/db = -sum_t g_t
        assert_eq!(t.grad(a), &[1.0 + 4.0 + 9.0, 0.5 + 0.0 - 1.5]);
        assert_eq!(t.scalar_grad(b), -6.0);
    }

    #[test]
    fn fused_max_nodes_match_finite_differences() {
        let mut rng = crate::rng::Rng::seed_from(21);
        for kind in [
            MaxKind::Softmax,
            MaxKind::SparseSoftmax,
            MaxKind::AveragedMax,
        ] {
            let method = MaxMethod::new(kind, 1.3, 1.0);
            for _ in 0..20 {
                let l = 4;
                let padded: Vec<f64> = (0..2 * l - 1).map(|_| rng.range(-2.0, 2.0)).collect();
                let w: Vec<f64> = (0..l).map(|_| rng.range(0.05, 0.95)).collect();
                let eval = |pv: &[f64], wv: &[f64]| {
                    let mut t = Tape::new();
                    let p = t.vector(pv.to_vec());
                    let wt = t.vector(wv.to_vec());
                    let out = t.windowed_max(p, wt, method).unwrap();
                    let coef = t.vector((0..l).map(|i| 0.5 + i as f64).collect());
                    let s = t.weighted_sum(out, coef).unwrap();
                    (t, p, wt, s)
                };
                let (mut t, p, wt, s) = eval(&padded, &w);
                t.backward(s).unwrap();
                for i in 0..padded.len() {
                    let an = t.grad(p)[i];
                    let fd = fd_scalar(
                        |v| {
                            let mut pv = padded.clone();
                            pv[i] = v;
                            let (t, _, _, s) = eval(&pv, &w);
                            t.scalar_value(s)
                        },
                        padded[i],
                    );
                    assert_close(an, fd);
                }
                for i in 0..l {
                    let an = t.grad(wt)[i];
                    let fd = fd_scalar(
                        |v| {
                            let mut wv = w.clone();
                            wv[i] = v;
                            let (t, _, _, s) = eval(&padded, &wv);
                            t.scalar_value(s)
                        },
                        w[i],
                    );
                    assert_close(an, fd);
                }
            }
        }
    }

    #[test]
    fn averaged_minmax_cols_matches_finite_differences() {
        let mut rng = crate::rng::Rng::seed_from(22);
        let (n, l) = (3, 4);
        let rows: Vec<f64> = (0..n * l).map(|_| rng.range(-2.0, 2.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.range(0.1, 0.9)).collect();
        let pk = 0.6;
        let eval = |rv: &[f64], pv: &[f64], pkv: f64| {
            let mut t = Tape::new();
            let rows_t = t.matrix(rv.to_vec(), n, l);
            let p_t = t.vector(pv.to_vec());
            let pk_t = t.scalar(pkv);
            let out = t.averaged_minmax_cols(rows_t, p_t, pk_t).unwrap();
            let coef = t.vector((0..l).map(|i| 1.0 + 0.25 * i as f64).collect());
            let s = t.weighted_sum(out, coef).unwrap();
            (t, rows_t, p_t, pk_t, s)
        };
        let (mut t, rows_t, p_t, pk_t, s) = eval(&rows, &p, pk);
        t.backward(s).unwrap();
        for i in 0..n * l {
            let fd = fd_scalar(
                |v| {
                    let mut rv = rows.clone();
                    rv[i] = v;
                    let (t, _, _, _, s) = eval(&rv, &p, pk);
                    t.scalar_value(s)
                },
                rows[i],
            );
            assert_close(t.grad(rows_t)[i], fd);
        }
        for i in 0..n {
            let fd = fd_scalar(
                |v| {
                    let mut pv = p.clone();
                    pv[i] = v;
                    let (t, _, _, _, s) = eval(&rows, &pv, pk);
                    t.scalar_value(s)
                },
                p[i],
            );
            assert_close(t.grad(p_t)[i], fd);
        }
        let fd = fd_scalar(
            |v| {
                let (t, _, _, _, s) = eval(&rows, &p, v);
                t.scalar_value(s)
            },
            pk,
        );
        assert_close(t.scalar_grad(pk_t), fd);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(AdError::NonScalarRoot)));
    }
}
