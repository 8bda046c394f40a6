//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] is an append-only arena of nodes. Every operation records its
//! parents and enough state to run its backward rule; [`Tape::backward`]
//! seeds the (scalar) loss with gradient 1 and walks the arena in reverse,
//! accumulating gradients into every node that transitively requires them.
//! Gradients accumulate additively, so a tensor used several times receives
//! the sum of all downstream contributions.
//!
//! Conventions:
//! - Tensors are row-major with shapes of rank 0 (scalar), 1, or 2.
//! - Leaves are either trainable (`requires_grad`) or detached constants;
//!   no gradient ever flows *through* a detached leaf.
//! - Kinked ops (`relu`, `abs_pow`) use subgradient 0 at the kink.
//! - All arithmetic is straight-line f64 with a fixed traversal order, so
//!   identical inputs produce bitwise-identical values and gradients.

use thiserror::Error;

/// Index of a tensor node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expects rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward has not been run; no gradient for node {0:?}")]
    NoGradient(TensorId),
}

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Matrix [r, c] plus a length-c bias row broadcast over rows.
    AddBias(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    /// Elementwise |x|^q for integer q >= 1.
    AbsPow(usize, u32),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    FrobeniusNorm(usize),
    Concat { parts: Vec<usize>, axis: usize },
    SliceRows { src: usize, start: usize, end: usize },
    SliceCols { src: usize, start: usize, end: usize },
    Reshape(usize),
    /// Scatter a length n(n-1)/2 vector of upper-triangle entries into a
    /// symmetric n x n matrix with zero diagonal.
    SymFromUpper { src: usize, n: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
    requires: bool,
}

/// Append-only computation record; see module docs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major matrix product of `a` ([m, k]) and `b` ([k, n]).
///
/// Shared by the tape and by frozen (inference) forward passes so both paths
/// produce bitwise-identical results.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Flat index of upper-triangle entry (i, j), i < j, in an n x n matrix.
pub fn upper_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, requires: bool) -> TensorId {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Node {
            shape,
            values,
            op,
            requires,
        });
        self.grads.push(None);
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes[id].requires
    }

    /// Registers a leaf tensor. `requires_grad = false` detaches it: values
    /// participate in the forward pass but no gradient flows through.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> TensorId {
        assert_eq!(
            numel(shape),
            values.len(),
            "leaf: shape {:?} does not match {} values",
            shape,
            values.len()
        );
        self.push(shape.to_vec(), values, Op::Leaf, requires_grad)
    }

    /// Convenience: detached scalar constant.
    pub fn constant(&mut self, value: f64) -> TensorId {
        self.leaf(&[], vec![value], false)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// Scalar value of a rank-0 or single-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    /// Gradient of the last `backward` loss with respect to `id`.
    pub fn grad(&self, id: TensorId) -> Result<&[f64]> {
        self.grads[id.0]
            .as_deref()
            .ok_or(AutodiffError::NoGradient(id))
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(AutodiffError::ShapeMismatch {
                op: op_name,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let req = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, op, req))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `a` is [r, c]; `bias` is [c], added to every row.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let a_shape = self.nodes[a.0].shape.clone();
        let b_shape = self.nodes[bias.0].shape.clone();
        if a_shape.len() != 2 {
            return Err(AutodiffError::RankMismatch {
                op: "add_bias",
                expected: 2,
                shape: a_shape,
            });
        }
        if b_shape != [a_shape[1]] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                lhs: a_shape,
                rhs: b_shape,
            });
        }
        let (r, c) = (a_shape[0], a_shape[1]);
        let mut values = self.nodes[a.0].values.clone();
        for i in 0..r {
            for j in 0..c {
                values[i * c + j] += self.nodes[bias.0].values[j];
            }
        }
        let req = self.requires(a.0) || self.requires(bias.0);
        Ok(self.push(a_shape, values, Op::AddBias(a.0, bias.0), req))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| x * factor).collect();
        let req = self.requires(a.0);
        self.push(
            self.nodes[a.0].shape.clone(),
            values,
            Op::Scale(a.0, factor),
            req,
        )
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let a_shape = self.nodes[a.0].shape.clone();
        let b_shape = self.nodes[b.0].shape.clone();
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: a_shape,
                rhs: b_shape,
            });
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let values = matmul_raw(&self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        let req = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(vec![m, n], values, Op::Matmul(a.0, b.0), req))
    }

    fn unary(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| f(*x)).collect();
        let req = self.requires(a.0);
        self.push(self.nodes[a.0].shape.clone(), values, op, req)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    /// Natural log; the caller is responsible for keeping inputs positive.
    pub fn log(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    /// Elementwise |x|^q, q >= 1. Subgradient at x = 0 is 0.
    pub fn abs_pow(&mut self, a: TensorId, q: u32) -> Result<TensorId> {
        if q == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "abs_pow",
                msg: "q must be >= 1".into(),
            });
        }
        Ok(self.unary(a, |x| x.abs().powi(q as i32), Op::AbsPow(a.0, q)))
    }

    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a.0, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(AutodiffError::RankMismatch {
                op: "softmax_rows",
                expected: 2,
                shape,
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].values[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                values[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                values[i * c + j] /= sum;
            }
        }
        let req = self.requires(a.0);
        Ok(self.push(shape, values, Op::SoftmaxRows(a.0), req))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        let req = self.requires(a.0);
        self.push(vec![], vec![total], Op::Sum(a.0), req)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].values.len().max(1);
        let total: f64 = self.nodes[a.0].values.iter().sum();
        let req = self.requires(a.0);
        self.push(vec![], vec![total / n as f64], Op::Mean(a.0), req)
    }

    /// sqrt of the sum of squared entries. Subgradient at the all-zero
    /// tensor is 0.
    pub fn frobenius_norm(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.nodes[a.0].values.iter().map(|x| x * x).sum();
        let req = self.requires(a.0);
        self.push(vec![], vec![total.sqrt()], Op::FrobeniusNorm(a.0), req)
    }

    /// Concatenates tensors along `axis`. Rank-0 inputs are treated as
    /// length-1 vectors on axis 0; rank-2 inputs must agree on the other
    /// axis.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let norm_shape = |s: &[usize]| -> Vec<usize> {
            if s.is_empty() {
                vec![1]
            } else {
                s.to_vec()
            }
        };
        let first = norm_shape(&self.nodes[parts[0].0].shape);
        let rank = first.len();
        if axis >= rank {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = norm_shape(&self.nodes[p.0].shape);
            if s.len() != rank || (0..rank).any(|d| d != axis && s[d] != first[d]) {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s,
                });
            }
            out_shape[axis] += s[axis];
        }
        let mut values = Vec::with_capacity(numel(&out_shape));
        if rank == 1 || axis == 0 {
            for p in parts {
                values.extend_from_slice(&self.nodes[p.0].values);
            }
        } else {
            // rank 2, axis 1: splice each row.
            let rows = out_shape[0];
            for i in 0..rows {
                for p in parts {
                    let s = norm_shape(&self.nodes[p.0].shape);
                    let c = s[1];
                    values.extend_from_slice(&self.nodes[p.0].values[i * c..(i + 1) * c]);
                }
            }
        }
        let req = parts.iter().any(|p| self.requires(p.0));
        Ok(self.push(
            out_shape,
            values,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            req,
        ))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(AutodiffError::RankMismatch {
                op: "slice_rows",
                expected: 2,
                shape,
            });
        }
        if start >= end || end > shape[0] {
            return Err(AutodiffError::InvalidArgument {
                op: "slice_rows",
                msg: format!("range {start}..{end} out of {} rows", shape[0]),
            });
        }
        let c = shape[1];
        let values = self.nodes[a.0].values[start * c..end * c].to_vec();
        let req = self.requires(a.0);
        Ok(self.push(
            vec![end - start, c],
            values,
            Op::SliceRows {
                src: a.0,
                start,
                end,
            },
            req,
        ))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(AutodiffError::RankMismatch {
                op: "slice_cols",
                expected: 2,
                shape,
            });
        }
        if start >= end || end > shape[1] {
            return Err(AutodiffError::InvalidArgument {
                op: "slice_cols",
                msg: format!("range {start}..{end} out of {} cols", shape[1]),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let w = end - start;
        let mut values = Vec::with_capacity(r * w);
        for i in 0..r {
            values.extend_from_slice(&self.nodes[a.0].values[i * c + start..i * c + end]);
        }
        let req = self.requires(a.0);
        Ok(self.push(
            vec![r, w],
            values,
            Op::SliceCols {
                src: a.0,
                start,
                end,
            },
            req,
        ))
    }

    /// Reinterprets `a` with a new shape of the same element count.
    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != self.nodes[a.0].values.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let values = self.nodes[a.0].values.clone();
        let req = self.requires(a.0);
        Ok(self.push(shape.to_vec(), values, Op::Reshape(a.0), req))
    }

    /// Builds a symmetric n x n matrix with zero diagonal from n(n-1)/2
    /// upper-triangle entries (row-major upper-triangle order).
    pub fn sym_from_upper(&mut self, a: TensorId, n: usize) -> Result<TensorId> {
        let m = n * (n - 1) / 2;
        if self.nodes[a.0].values.len() != m {
            return Err(AutodiffError::InvalidArgument {
                op: "sym_from_upper",
                msg: format!(
                    "expected {m} upper-triangle entries for n = {n}, got {}",
                    self.nodes[a.0].values.len()
                ),
            });
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = self.nodes[a.0].values[upper_index(i, j, n)];
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        let req = self.requires(a.0);
        Ok(self.push(vec![n, n], values, Op::SymFromUpper { src: a.0, n }, req))
    }

    /// Runs reverse-mode accumulation from the scalar `loss`.
    ///
    /// Afterwards [`Tape::grad`] returns d(loss)/d(node) for every node that
    /// transitively requires gradients. Calling backward again replaces the
    /// previous gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires || self.grads[idx].is_none() {
                continue;
            }
            let g = self.grads[idx].take().unwrap();
            self.spread(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, contrib: &[f64]) {
        if !self.nodes[target].requires {
            return;
        }
        let buf = self.grads[target]
            .get_or_insert_with(|| vec![0.0; self.nodes[target].values.len()]);
        for (b, c) in buf.iter_mut().zip(contrib) {
            *b += c;
        }
    }

    fn spread(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[b].values)
                    .map(|(gi, bv)| gi * bv)
                    .collect();
                let gb: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].values)
                    .map(|(gi, av)| gi * av)
                    .collect();
                self.accumulate(a, &ga);
                self.accumulate(b, &gb);
            }
            Op::AddBias(a, bias) => {
                self.accumulate(a, g);
                let c = self.nodes[bias].values.len();
                let r = g.len() / c;
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += g[i * c + j];
                    }
                }
                self.accumulate(bias, &gb);
            }
            Op::Scale(a, factor) => {
                let ga: Vec<f64> = g.iter().map(|x| x * factor).collect();
                self.accumulate(a, &ga);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let n = self.nodes[b].shape[1];
                let bt = transpose(&self.nodes[b].values, k, n);
                let ga = matmul_raw(g, &bt, m, n, k);
                self.accumulate(a, &ga);
                let at = transpose(&self.nodes[a].values, m, k);
                let gb = matmul_raw(&at, g, k, m, n);
                self.accumulate(b, &gb);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].values)
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[idx].values)
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[idx].values)
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[idx].values)
                    .map(|(gi, y)| gi * y)
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::Log(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].values)
                    .map(|(gi, x)| gi / x)
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::AbsPow(a, q) => {
                let q = q as i32;
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].values)
                    .map(|(gi, x)| {
                        if *x == 0.0 {
                            0.0
                        } else {
                            gi * q as f64 * x.abs().powi(q - 1) * x.signum()
                        }
                    })
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::Clamp(a, lo, hi) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].values)
                    .map(|(gi, x)| if *x >= lo && *x <= hi { *gi } else { 0.0 })
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                let y = &self.nodes[idx].values;
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g[i * c + j] * y[i * c + j];
                    }
                    for j in 0..c {
                        ga[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
                    }
                }
                self.accumulate(a, &ga);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; self.nodes[a].values.len()];
                self.accumulate(a, &ga);
            }
            Op::Mean(a) => {
                let n = self.nodes[a].values.len().max(1) as f64;
                let ga = vec![g[0] / n; self.nodes[a].values.len()];
                self.accumulate(a, &ga);
            }
            Op::FrobeniusNorm(a) => {
                let norm = self.nodes[idx].values[0];
                if norm > 0.0 {
                    let scale = g[0] / norm;
                    let ga: Vec<f64> =
                        self.nodes[a].values.iter().map(|x| x * scale).collect();
                    self.accumulate(a, &ga);
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[idx].shape.clone();
                if out_shape.len() == 1 || axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].values.len();
                        let gp = g[offset..offset + len].to_vec();
                        self.accumulate(p, &gp);
                        offset += len;
                    }
                } else {
                    let rows = out_shape[0];
                    let total_c = out_shape[1];
                    let mut col_offset = 0;
                    for p in parts {
                        let c = self.nodes[p].shape[1];
                        let mut gp = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            let base = i * total_c + col_offset;
                            gp.extend_from_slice(&g[base..base + c]);
                        }
                        self.accumulate(p, &gp);
                        col_offset += c;
                    }
                }
            }
            Op::SliceRows { src, start, end } => {
                let c = self.nodes[src].shape[1];
                let mut gs = vec![0.0; self.nodes[src].values.len()];
                gs[start * c..end * c].copy_from_slice(g);
                self.accumulate(src, &gs);
            }
            Op::SliceCols { src, start, end } => {
                let (r, c) = (self.nodes[src].shape[0], self.nodes[src].shape[1]);
                let w = end - start;
                let mut gs = vec![0.0; r * c];
                for i in 0..r {
                    gs[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(src, &gs);
            }
            Op::Reshape(a) => {
                self.accumulate(a, g);
            }
            Op::SymFromUpper { src, n } => {
                let m = n * (n - 1) / 2;
                let mut gs = vec![0.0; m];
                for i in 0..n {
                    for j in (i + 1)..n {
                        gs[upper_index(i, j, n)] += g[i * n + j] + g[j * n + i];
                    }
                }
                self.accumulate(src, &gs);
            }
        }
    }
}

/// Step size for central-difference gradient checks.
pub const GRAD_CHECK_H: f64 = 1e-5;

/// Compares an analytic gradient against central finite differences of `f`
/// at `theta` and returns the worst per-coordinate relative error,
/// |fd - analytic| / max(|fd|, |analytic|, 1).
pub fn gradient_check<F>(f: F, theta: &[f64], analytic: &[f64]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + GRAD_CHECK_H;
        let up = f(&probe);
        probe[i] = orig - GRAD_CHECK_H;
        let down = f(&probe);
        probe[i] = orig;
        let fd = (up - down) / (2.0 * GRAD_CHECK_H);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape_grad(
        build: impl Fn(&mut Tape, TensorId) -> TensorId,
        theta: &[f64],
        shape: &[usize],
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(shape, theta.to_vec(), true);
        let loss = build(&mut tape, x);
        tape.backward(loss).unwrap();
        tape.grad(x).unwrap().to_vec()
    }

    fn tape_value(
        build: impl Fn(&mut Tape, TensorId) -> TensorId,
        theta: &[f64],
        shape: &[usize],
    ) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(shape, theta.to_vec(), true);
        let loss = build(&mut tape, x);
        tape.scalar(loss)
    }

    fn check_op(build: impl Fn(&mut Tape, TensorId) -> TensorId + Copy, theta: &[f64], shape: &[usize]) -> f64 {
        let analytic = tape_grad(build, theta, shape);
        gradient_check(|t| tape_value(build, t, shape), theta, &analytic)
    }

    #[test]
    fn linear_function_gradient_is_exact() {
        // f(x) = sum(3x) has constant gradient 3; finite differences of a
        // linear function are exact up to rounding.
        let err = check_op(
            |tape, x| {
                let s = tape.scale(x, 3.0);
                tape.sum(s)
            },
            &[0.4, -1.2, 2.5],
            &[3],
        );
        assert!(err < 1e-10, "linear gradient error {err}");
    }

    type ScalarBuilder = fn(&mut Tape, TensorId) -> TensorId;

    #[test]
    fn elementwise_op_gradients_match_finite_differences() {
        let theta = [0.37, -0.85, 1.42, -2.03];
        let cases: Vec<(&str, ScalarBuilder)> = vec![
            ("relu", |t, x| {
                let y = t.relu(x);
                t.sum(y)
            }),
            ("sigmoid", |t, x| {
                let y = t.sigmoid(x);
                t.sum(y)
            }),
            ("tanh", |t, x| {
                let y = t.tanh(x);
                t.sum(y)
            }),
            ("exp", |t, x| {
                let y = t.exp(x);
                t.sum(y)
            }),
            ("abs_pow2", |t, x| {
                let y = t.abs_pow(x, 2).unwrap();
                t.sum(y)
            }),
            ("abs_pow3", |t, x| {
                let y = t.abs_pow(x, 3).unwrap();
                t.sum(y)
            }),
            ("abs_pow1", |t, x| {
                let y = t.abs_pow(x, 1).unwrap();
                t.sum(y)
            }),
            ("mean", |t, x| t.mean(x)),
            ("frobenius", |t, x| t.frobenius_norm(x)),
        ];
        for (name, build) in cases {
            let err = check_op(build, &theta, &[4]);
            assert!(err < 1e-7, "{name} gradient error {err}");
        }
    }

    #[test]
    fn log_gradient_matches_on_positive_inputs() {
        let err = check_op(
            |t, x| {
                let y = t.log(x);
                t.sum(y)
            },
            &[0.31, 1.7, 4.2],
            &[3],
        );
        assert!(err < 1e-7, "log gradient error {err}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        // Treat a 2x3 matrix as the variable, multiply by a fixed 3x2.
        let fixed = vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5];
        let build = move |t: &mut Tape, x: TensorId| {
            let b = t.leaf(&[3, 2], fixed.clone(), false);
            let y = t.matmul(x, b).unwrap();
            let sq = t.abs_pow(y, 2).unwrap();
            t.sum(sq)
        };
        let theta = [0.2, 0.8, -0.3, 1.1, -0.6, 0.9];
        let analytic = tape_grad(&build, &theta, &[2, 3]);
        let err = gradient_check(|th| tape_value(&build, th, &[2, 3]), &theta, &analytic);
        assert!(err < 1e-7, "matmul gradient error {err}");
    }

    #[test]
    fn softmax_rows_gradient_matches_finite_differences() {
        let build = |t: &mut Tape, x: TensorId| {
            let y = t.softmax_rows(x).unwrap();
            // Weighted sum keeps the loss sensitive to every coordinate.
            let w = t.leaf(&[2, 3], vec![0.3, -1.1, 0.7, 2.0, 0.1, -0.4], false);
            let p = t.mul(y, w).unwrap();
            t.sum(p)
        };
        let theta = [0.1, 0.9, -0.5, 1.2, 0.0, -1.3];
        let analytic = tape_grad(build, &theta, &[2, 3]);
        let err = gradient_check(|th| tape_value(build, th, &[2, 3]), &theta, &analytic);
        assert!(err < 1e-7, "softmax gradient error {err}");
    }

    #[test]
    fn structural_op_gradients_match_finite_differences() {
        // slice / concat / reshape / sym_from_upper / add_bias / clamp in one
        // composite so the scatter paths all see nonuniform downstream grads.
        let build = |t: &mut Tape, x: TensorId| {
            let m = t.reshape(x, &[2, 3]).unwrap();
            let left = t.slice_cols(m, 0, 2).unwrap();
            let right = t.slice_cols(m, 1, 3).unwrap();
            let top = t.slice_rows(m, 0, 1).unwrap();
            let wide = t.concat(&[left, right], 1).unwrap();
            let bias = t.leaf(&[4], vec![0.1, -0.2, 0.3, -0.4], false);
            let biased = t.add_bias(wide, bias).unwrap();
            let clamped = t.clamp(biased, -0.8, 0.9);
            let s1 = t.sum(clamped);
            let tri = t.reshape(top, &[3]).unwrap();
            let sym = t.sym_from_upper(tri, 3).unwrap();
            let sq = t.abs_pow(sym, 2).unwrap();
            let s2 = t.sum(sq);
            t.add(s1, s2).unwrap()
        };
        // Stay away from the clamp kinks at -0.8 / 0.9.
        let theta = [0.37, -0.61, 0.12, 0.44, -0.29, 0.03];
        let analytic = tape_grad(build, &theta, &[6]);
        let err = gradient_check(|th| tape_value(build, th, &[6]), &theta, &analytic);
        assert!(err < 1e-7, "structural composite gradient error {err}");
    }

    #[test]
    fn reused_tensor_accumulates_both_contributions() {
        // f(x) = sum(x * x) + 2 sum(x): grad = 2x + 2.
        let mut tape = Tape::new();
        let x = tape.leaf(&[3], vec![1.0, -2.0, 0.5], true);
        let sq = tape.mul(x, x).unwrap();
        let s1 = tape.sum(sq);
        let d = tape.scale(x, 2.0);
        let s2 = tape.sum(d);
        let loss = tape.add(s1, s2).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g, &[4.0, -2.0, 3.0]);
    }

    #[test]
    fn detached_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0], true);
        let c = tape.leaf(&[2], vec![3.0, 4.0], false);
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_err());
    }

    #[test]
    fn relu_and_abs_use_zero_subgradient_at_kink() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[2], vec![0.0, 0.0], true);
        let r = tape.relu(x);
        let a = tape.abs_pow(x, 1).unwrap();
        let s = tape.add(r, a).unwrap();
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0], true);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, AutodiffError::NonScalarLoss { .. }));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[2], vec![1.0, 2.0], false);
        let b = tape.leaf(&[3], vec![1.0, 2.0, 3.0], false);
        assert!(matches!(
            tape.add(a, b),
            Err(AutodiffError::ShapeMismatch { op: "add", .. })
        ));
        let m = tape.leaf(&[2, 2], vec![1.0; 4], false);
        assert!(matches!(
            tape.matmul(m, b),
            Err(AutodiffError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_gradients() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(&[2, 2], vec![0.3, -0.7, 1.9, 0.2], true);
            let y = tape.softmax_rows(x).unwrap();
            let s = tape.sigmoid(y);
            let loss = tape.frobenius_norm(s);
            tape.backward(loss).unwrap();
            (tape.scalar(loss), tape.grad(x).unwrap().to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&g1), bits(&g2));
    }

    #[test]
    fn sym_from_upper_places_entries_symmetrically() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[3], vec![1.0, 2.0, 3.0], false);
        let m = tape.sym_from_upper(x, 3).unwrap();
        assert_eq!(
            tape.values(m),
            &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]
        );
    }
}
