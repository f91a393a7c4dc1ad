use std::collections::BTreeMap;

use rand::RngCore;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use super::AdError;
use crate::rng;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a trainable tensor across graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    Same,
    /// rhs is `[1, cols]` against a `[rows, cols]` lhs.
    Row,
    /// rhs holds one element.
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    Max(Var, usize),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm { src: Var, axis: usize, inv_std: Vec<f64> },
    Dropout(Var, Vec<f64>),
    Embedding { table: Var, indices: Vec<usize> },
    Clip { src: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    Where(Vec<bool>, Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape. Values are computed eagerly as ops are recorded.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// One entry per parameter registered on the graph; zeros when unreachable.
    pub params: BTreeMap<ParamId, Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to any recorded value, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }
}

/// Iteration geometry for reductions along one axis of a matrix.
#[derive(Clone, Copy)]
struct Lanes {
    count: usize,
    len: usize,
    lane_step: usize,
    elem_step: usize,
}

impl Lanes {
    fn of(t: &Tensor, axis: usize) -> Result<Self, AdError> {
        if !t.is_matrix() || axis > 1 {
            return Err(AdError::ShapeMismatch(format!("axis {axis} reduction needs a matrix, got {:?}", t.shape())));
        }
        let (r, c) = (t.rows(), t.cols());
        Ok(if axis == 1 {
            Lanes { count: r, len: c, lane_step: c, elem_step: 1 }
        } else {
            Lanes { count: c, len: r, lane_step: 1, elem_step: c }
        })
    }

    fn index(&self, lane: usize, j: usize) -> usize {
        lane * self.lane_step + j * self.elem_step
    }
}

fn broadcast_kind(a: &Tensor, b: &Tensor) -> Result<Bcast, AdError> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.numel() == 1 {
        Ok(Bcast::Scalar)
    } else if a.is_matrix() && b.shape() == [1, a.cols()] {
        Ok(Bcast::Row)
    } else {
        Err(AdError::ShapeMismatch(format!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape())))
    }
}

fn rhs_index(kind: Bcast, i: usize, cols: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Scalar => 0,
    }
}

fn reduce_to(kind: Bcast, g: &[f64], target: &Tensor, cols: usize) -> Tensor {
    match kind {
        Bcast::Same => Tensor::new(target.shape(), g.to_vec()).expect("same shape"),
        Bcast::Scalar => Tensor::new(target.shape(), vec![g.iter().sum()]).expect("scalar"),
        Bcast::Row => {
            let mut out = vec![0.0; cols];
            for (i, &x) in g.iter().enumerate() {
                out[i % cols] += x;
            }
            Tensor::new(target.shape(), out).expect("row")
        }
    }
}

fn check(t: Tensor, op: &str) -> Result<Tensor, AdError> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(AdError::NonFinite(op.to_string()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var, AdError> {
        let value = check(value, name)?;
        Ok(self.push(value, op))
    }

    /// Non-trainable input. Its gradient is still available through [`Gradients::wrt`].
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Trainable input, reported in [`Gradients::params`].
    pub fn param(&mut self, id: ParamId, t: &Tensor) -> Var {
        let v = self.push(t.clone(), Op::Param);
        self.params.push((id, v));
        v
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Bcast), AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let kind = broadcast_kind(ta, tb)?;
        let cols = if ta.is_matrix() { ta.cols() } else { 1 };
        let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, tb.data()[rhs_index(kind, i, cols)])).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok((check(out, name)?, kind))
    }

    /// Elementwise sum; `b` may also be a `[1, cols]` row or a single element.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (t, k) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b, k)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (t, k) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b, k)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (t, k) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b, k)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (t, k) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b, k)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        let t = self.value(a).map(|x| x * c);
        self.record(t, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        let t = self.value(a).map(|x| x + c);
        self.record(t, Op::AddScalar(a), "add_scalar")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AdError> {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(AdError::ShapeMismatch(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(m, n, matmul(ta.data(), tb.data(), m, k, n))?;
        self.record(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AdError> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(AdError::ShapeMismatch(format!("transpose of {:?}", ta.shape())));
        }
        let t = ta.transposed();
        Ok(self.push(t, Op::Transpose(a)))
    }

    /// Joins matrices along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AdError> {
        let first = parts.first().ok_or_else(|| AdError::ShapeMismatch("concat of nothing".into()))?;
        let shape0 = self.value(*first).shape().to_vec();
        if shape0.len() != 2 || axis > 1 {
            return Err(AdError::ShapeMismatch("concat needs matrices and axis 0 or 1".into()));
        }
        let other = 1 - axis;
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != 2 || s[other] != shape0[other] {
                return Err(AdError::ShapeMismatch(format!("concat {:?} with {:?} on axis {axis}", shape0, s)));
            }
            total += s[axis];
        }
        let out = if axis == 0 {
            let data = parts.iter().flat_map(|p| self.value(*p).data().iter().copied()).collect();
            Tensor::matrix(total, shape0[1], data)?
        } else {
            let rows = shape0[0];
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(r));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis)))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AdError> {
        let ta = self.value(a);
        if !ta.is_matrix() || axis > 1 || start + len > ta.shape()[axis] {
            return Err(AdError::ShapeMismatch(format!("slice {start}+{len} on axis {axis} of {:?}", ta.shape())));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let out = if axis == 0 {
            Tensor::matrix(len, c, ta.data()[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&ta.row(i)[start..start + len]);
            }
            Tensor::matrix(r, len, data)?
        };
        Ok(self.push(out, Op::Slice { src: a, axis, start }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let s = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    /// Sums along `axis`, keeping it as a length-1 dimension.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, AdError> {
        let ta = self.value(a);
        let lanes = Lanes::of(ta, axis)?;
        let data: Vec<f64> =
            (0..lanes.count).map(|l| (0..lanes.len).map(|j| ta.data()[lanes.index(l, j)]).sum()).collect();
        let shape = if axis == 1 { [ta.rows(), 1] } else { [1, ta.cols()] };
        let out = Tensor::new(&shape, data)?;
        self.record(out, Op::SumAxis(a, axis), "sum_axis")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        let ta = self.value(a);
        let m = ta.data().iter().sum::<f64>() / ta.numel() as f64;
        self.record(Tensor::scalar(m), Op::Mean(a), "mean")
    }

    /// Largest element; the gradient flows to the first maximizer.
    pub fn max(&mut self, a: Var) -> Result<Var, AdError> {
        let ta = self.value(a);
        let (idx, &m) = ta
            .data()
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
        self.record(Tensor::scalar(m), Op::Max(a, idx), "max")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a).map(f64::exp);
        self.record(t, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a).map(f64::ln);
        self.record(t, Op::Log(a), "log")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a).map(|x| x.max(0.0));
        Ok(self.push(t, Op::Relu(a)))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, AdError> {
        let ta = self.value(a);
        let lanes = Lanes::of(ta, axis)?;
        let mut out = ta.clone();
        let d = out.data_mut();
        for l in 0..lanes.count {
            let m = (0..lanes.len).map(|j| d[lanes.index(l, j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..lanes.len {
                let i = lanes.index(l, j);
                d[i] = (d[i] - m).exp();
                z += d[i];
            }
            for j in 0..lanes.len {
                d[lanes.index(l, j)] /= z;
            }
        }
        self.record(out, Op::Softmax(a, axis), "softmax")
    }

    /// `x - logsumexp(x)` along `axis`, evaluated stably.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, AdError> {
        let ta = self.value(a);
        let lanes = Lanes::of(ta, axis)?;
        let mut out = ta.clone();
        let d = out.data_mut();
        for l in 0..lanes.count {
            let m = (0..lanes.len).map(|j| d[lanes.index(l, j)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..lanes.len).map(|j| (d[lanes.index(l, j)] - m).exp()).sum::<f64>().ln();
            for j in 0..lanes.len {
                d[lanes.index(l, j)] -= lse;
            }
        }
        self.record(out, Op::LogSoftmax(a, axis), "log_softmax")
    }

    /// `(x - mean) / sqrt(var + eps)` along `axis`, without gain or bias.
    pub fn layer_norm(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var, AdError> {
        if !(eps > 0.0) {
            return Err(AdError::ShapeMismatch("layer_norm eps must be positive".into()));
        }
        let ta = self.value(a);
        let lanes = Lanes::of(ta, axis)?;
        let mut out = ta.clone();
        let mut inv_std = Vec::with_capacity(lanes.count);
        let d = out.data_mut();
        let n = lanes.len as f64;
        for l in 0..lanes.count {
            let mean = (0..lanes.len).map(|j| d[lanes.index(l, j)]).sum::<f64>() / n;
            let var = (0..lanes.len).map(|j| (d[lanes.index(l, j)] - mean).powi(2)).sum::<f64>() / n;
            let s = 1.0 / (var + eps).sqrt();
            for j in 0..lanes.len {
                let i = lanes.index(l, j);
                d[i] = (d[i] - mean) * s;
            }
            inv_std.push(s);
        }
        self.record(out, Op::LayerNorm { src: a, axis, inv_std }, "layer_norm")
    }

    /// Inverted dropout. Identity (same handle) when not training or `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool, seed: u64) -> Result<Var, AdError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AdError::ShapeMismatch(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let mut r = rng::seeded(seed);
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if ((r.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64) < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let ta = self.value(a);
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    /// Rows of `table` selected by `indices`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, AdError> {
        let tt = self.value(table);
        if !tt.is_matrix() || indices.iter().any(|&i| i >= tt.rows()) {
            return Err(AdError::ShapeMismatch("embedding index out of range".into()));
        }
        let d = tt.cols();
        let data = indices.iter().flat_map(|&i| tt.row(i).iter().copied()).collect();
        let out = Tensor::matrix(indices.len(), d, data)?;
        Ok(self.push(out, Op::Embedding { table, indices: indices.to_vec() }))
    }

    /// Clamp into `[lo, hi]`. Gradient passes wherever `lo <= x <= hi`, boundaries included.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, AdError> {
        let t = self.value(a).map(|x| x.clamp(lo, hi));
        Ok(self.push(t, Op::Clip { src: a, lo, hi }))
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AdError::ShapeMismatch(format!("minimum {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x.min(*y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Minimum(a, b)))
    }

    /// `mask ? a : b` elementwise.
    pub fn select(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || mask.len() != ta.numel() {
            return Err(AdError::ShapeMismatch("where: mask and operands must agree".into()));
        }
        let data = mask.iter().zip(ta.data().iter().zip(tb.data())).map(|(&m, (x, y))| if m { *x } else { *y }).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Where(mask.to_vec(), a, b)))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AdError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(AdError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lt.shape(), vec![1.0])?);

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            let gd = g.data();
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Add(a, b, k) | Op::Sub(a, b, k) => {
                    let ta = self.value(*a);
                    let cols = if ta.is_matrix() { ta.cols() } else { 1 };
                    acc(&mut grads, *a, g.clone());
                    let mut gb = reduce_to(*k, gd, self.value(*b), cols);
                    if matches!(node.op, Op::Sub(..)) {
                        gb = gb.map(|x| -x);
                    }
                    acc(&mut grads, *b, gb);
                }
                Op::Mul(a, b, k) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let cols = if ta.is_matrix() { ta.cols() } else { 1 };
                    let ga: Vec<f64> =
                        gd.iter().enumerate().map(|(i, x)| x * tb.data()[rhs_index(*k, i, cols)]).collect();
                    let gb_full: Vec<f64> = gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    acc(&mut grads, *a, Tensor::new(ta.shape(), ga)?);
                    acc(&mut grads, *b, reduce_to(*k, &gb_full, tb, cols));
                }
                Op::Div(a, b, k) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let cols = if ta.is_matrix() { ta.cols() } else { 1 };
                    let ga: Vec<f64> =
                        gd.iter().enumerate().map(|(i, x)| x / tb.data()[rhs_index(*k, i, cols)]).collect();
                    let gb_full: Vec<f64> = gd
                        .iter()
                        .enumerate()
                        .map(|(i, x)| {
                            let bv = tb.data()[rhs_index(*k, i, cols)];
                            -x * ta.data()[i] / (bv * bv)
                        })
                        .collect();
                    acc(&mut grads, *a, Tensor::new(ta.shape(), ga)?);
                    acc(&mut grads, *b, reduce_to(*k, &gb_full, tb, cols));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let ga = matmul_nt(gd, tb.data(), m, n, k);
                    let gb = matmul_tn(ta.data(), gd, m, k, n);
                    acc(&mut grads, *a, Tensor::matrix(m, k, ga)?);
                    acc(&mut grads, *b, Tensor::matrix(k, n, gb)?);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transposed()),
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for p in parts {
                        let s = self.value(*p).shape().to_vec();
                        let piece = if *axis == 0 {
                            let c = s[1];
                            Tensor::matrix(s[0], c, gd[offset * c..(offset + s[0]) * c].to_vec())?
                        } else {
                            let total = g.cols();
                            let mut data = Vec::with_capacity(s[0] * s[1]);
                            for r in 0..s[0] {
                                data.extend_from_slice(&gd[r * total + offset..r * total + offset + s[1]]);
                            }
                            Tensor::matrix(s[0], s[1], data)?
                        };
                        offset += s[*axis];
                        acc(&mut grads, *p, piece);
                    }
                }
                Op::Slice { src, axis, start } => {
                    let ts = self.value(*src);
                    let mut full = Tensor::zeros(ts.shape());
                    let c = ts.cols();
                    let fd = full.data_mut();
                    if *axis == 0 {
                        fd[start * c..start * c + gd.len()].copy_from_slice(gd);
                    } else {
                        let len = g.cols();
                        for r in 0..ts.rows() {
                            fd[r * c + start..r * c + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                        }
                    }
                    acc(&mut grads, *src, full);
                }
                Op::Sum(a) => acc(&mut grads, *a, Tensor::full(self.value(*a).shape(), gd[0])),
                Op::SumAxis(a, axis) => {
                    let ta = self.value(*a);
                    let lanes = Lanes::of(ta, *axis)?;
                    let mut full = Tensor::zeros(ta.shape());
                    let fd = full.data_mut();
                    for l in 0..lanes.count {
                        for j in 0..lanes.len {
                            fd[lanes.index(l, j)] = gd[l];
                        }
                    }
                    acc(&mut grads, *a, full);
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    acc(&mut grads, *a, Tensor::full(ta.shape(), gd[0] / ta.numel() as f64));
                }
                Op::Max(a, i) => {
                    let mut full = Tensor::zeros(self.value(*a).shape());
                    full.data_mut()[*i] = gd[0];
                    acc(&mut grads, *a, full);
                }
                Op::Exp(a) => {
                    let data = gd.iter().zip(y.data()).map(|(g, y)| g * y).collect();
                    acc(&mut grads, *a, Tensor::new(y.shape(), data)?);
                }
                Op::Log(a) => {
                    let data = gd.iter().zip(self.value(*a).data()).map(|(g, x)| g / x).collect();
                    acc(&mut grads, *a, Tensor::new(y.shape(), data)?);
                }
                Op::Relu(a) => {
                    let data = gd.iter().zip(self.value(*a).data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    acc(&mut grads, *a, Tensor::new(y.shape(), data)?);
                }
                Op::Softmax(a, axis) => {
                    let lanes = Lanes::of(y, *axis)?;
                    let yd = y.data();
                    let mut out = vec![0.0; yd.len()];
                    for l in 0..lanes.count {
                        let dot: f64 = (0..lanes.len).map(|j| gd[lanes.index(l, j)] * yd[lanes.index(l, j)]).sum();
                        for j in 0..lanes.len {
                            let i = lanes.index(l, j);
                            out[i] = yd[i] * (gd[i] - dot);
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(y.shape(), out)?);
                }
                Op::LogSoftmax(a, axis) => {
                    let lanes = Lanes::of(y, *axis)?;
                    let yd = y.data();
                    let mut out = vec![0.0; yd.len()];
                    for l in 0..lanes.count {
                        let total: f64 = (0..lanes.len).map(|j| gd[lanes.index(l, j)]).sum();
                        for j in 0..lanes.len {
                            let i = lanes.index(l, j);
                            out[i] = gd[i] - yd[i].exp() * total;
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(y.shape(), out)?);
                }
                Op::LayerNorm { src, axis, inv_std } => {
                    let lanes = Lanes::of(y, *axis)?;
                    let yd = y.data();
                    let n = lanes.len as f64;
                    let mut out = vec![0.0; yd.len()];
                    for l in 0..lanes.count {
                        let mean_g = (0..lanes.len).map(|j| gd[lanes.index(l, j)]).sum::<f64>() / n;
                        let mean_gy = (0..lanes.len).map(|j| gd[lanes.index(l, j)] * yd[lanes.index(l, j)]).sum::<f64>() / n;
                        for j in 0..lanes.len {
                            let i = lanes.index(l, j);
                            out[i] = inv_std[l] * (gd[i] - mean_g - yd[i] * mean_gy);
                        }
                    }
                    acc(&mut grads, *src, Tensor::new(y.shape(), out)?);
                }
                Op::Dropout(a, mask) => {
                    let data = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                    acc(&mut grads, *a, Tensor::new(y.shape(), data)?);
                }
                Op::Embedding { table, indices } => {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut full = Tensor::zeros(tt.shape());
                    let fd = full.data_mut();
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            fd[i * d + j] += gd[r * d + j];
                        }
                    }
                    acc(&mut grads, *table, full);
                }
                Op::Clip { src, lo, hi } => {
                    let data = gd
                        .iter()
                        .zip(self.value(*src).data())
                        .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *src, Tensor::new(y.shape(), data)?);
                }
                Op::Minimum(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = vec![0.0; gd.len()];
                    let mut gb = vec![0.0; gd.len()];
                    for i in 0..gd.len() {
                        if ta.data()[i] <= tb.data()[i] {
                            ga[i] = gd[i];
                        } else {
                            gb[i] = gd[i];
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(y.shape(), ga)?);
                    acc(&mut grads, *b, Tensor::new(y.shape(), gb)?);
                }
                Op::Where(mask, a, b) => {
                    let ga = gd.iter().zip(mask).map(|(g, &m)| if m { *g } else { 0.0 }).collect();
                    let gb = gd.iter().zip(mask).map(|(g, &m)| if m { 0.0 } else { *g }).collect();
                    acc(&mut grads, *a, Tensor::new(y.shape(), ga)?);
                    acc(&mut grads, *b, Tensor::new(y.shape(), gb)?);
                }
            }
            grads[idx] = Some(g);
        }

        let mut params = BTreeMap::new();
        for &(id, v) in &self.params {
            let g = grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            params.entry(id).and_modify(|t: &mut Tensor| t.add_assign(&g)).or_insert(g);
        }
        Ok(Gradients { params, nodes: grads })
    }
}
