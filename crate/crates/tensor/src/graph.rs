//! Append-only computation graph with reverse-mode differentiation.
//!
//! Nodes are recorded in creation order, which is also a valid topological
//! order. All graph operations work on rank-2 tensors; vectors are `1 x n`
//! rows or `n x 1` columns and scalars are `1 x 1`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result, TensorError};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Environment switch that turns on per-op finite checks in any build.
pub const DEBUG_NUMERICS_ENV: &str = "KBIE_DEBUG_NUMERICS";

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    Add,
    Mul,
    Concat,
    Slice,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    Sum,
    Mean,
    Gather,
    Scale,
    BceWithLogits,
    MaxPool,
    Dropout,
    SegmentSoftmax,
    SegmentLogSumExp,
    SegmentSum,
    Reshape,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax { input: Var, axis: usize },
    Sum { input: Var, axis: Option<usize> },
    Mean { input: Var, axis: Option<usize> },
    Gather { input: Var, indices: Vec<usize> },
    Scale { input: Var, factor: f64 },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    MaxPool { input: Var, argmax: Vec<usize> },
    Dropout { input: Var, mask: Vec<f64> },
    SegmentSoftmax { input: Var, groups: Vec<Vec<usize>> },
    SegmentLogSumExp { input: Var, groups: Vec<Vec<usize>> },
    SegmentSum { input: Var, segments: Vec<usize> },
    Reshape { input: Var },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Gather { .. } => OpKind::Gather,
            Op::Scale { .. } => OpKind::Scale,
            Op::BceWithLogits { .. } => OpKind::BceWithLogits,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::SegmentSoftmax { .. } => OpKind::SegmentSoftmax,
            Op::SegmentLogSumExp { .. } => OpKind::SegmentLogSumExp,
            Op::SegmentSum { .. } => OpKind::SegmentSum,
            Op::Reshape { .. } => OpKind::Reshape,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    train: bool,
    check_numerics: bool,
    rng: ChaCha8Rng,
    fault: Option<OpKind>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn numerics_default() -> bool {
    cfg!(debug_assertions)
        || std::env::var(DEBUG_NUMERICS_ENV).map_or(false, |v| v == "1")
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(shape_err(op, t.shape(), &[0, 0]));
    }
    Ok((t.rows(), t.cols()))
}

fn bdim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, n) | (n, 1) => Some(n),
        _ => None,
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

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            train: false,
            check_numerics: numerics_default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            fault: None,
        }
    }

    /// Training-mode graph whose dropout masks come from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Graph {
            train: true,
            rng,
            ..Graph::new()
        }
    }

    /// Switch dropout on (with the given mask stream) or off.
    pub fn set_training(&mut self, rng: Option<ChaCha8Rng>) {
        self.train = rng.is_some();
        if let Some(rng) = rng {
            self.rng = rng;
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn set_check_numerics(&mut self, on: bool) {
        self.check_numerics = on;
    }

    /// Corrupts the backward rule of one op kind (input gradients scaled by
    /// 1.5). Only used to confirm that gradient checks catch broken rules.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if self.check_numerics && !value.is_finite() {
            return Err(TensorError::Numerics { op: name });
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => value.requires_grad,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Slice { input, .. }
            | Op::Softmax { input, .. }
            | Op::Sum { input, .. }
            | Op::Mean { input, .. }
            | Op::Gather { input, .. }
            | Op::Scale { input, .. }
            | Op::MaxPool { input, .. }
            | Op::Dropout { input, .. }
            | Op::SegmentSoftmax { input, .. }
            | Op::SegmentLogSumExp { input, .. }
            | Op::SegmentSum { input, .. }
            | Op::Reshape { input } => vec![*input],
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) => vec![*a],
            Op::BceWithLogits { logits, .. } => vec![*logits],
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = false;
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let src = params.get(id);
        let mut value = Tensor::raw(src.shape().to_vec(), src.data().to_vec())
            .expect("parameter tensors are well-formed");
        value.requires_grad = src.requires_grad;
        let needs_grad = value.requires_grad;
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Tensor::raw_matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    fn broadcast(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ra, ca) = dims2(self.value(a), name)?;
        let (rb, cb) = dims2(self.value(b), name)?;
        let (r, c) = match (bdim(ra, rb), bdim(ca, cb)) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(shape_err(name, self.shape(a), self.shape(b))),
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let ia = if ra == 1 { 0 } else { i };
            let ib = if rb == 1 { 0 } else { i };
            for j in 0..c {
                let ja = if ca == 1 { 0 } else { j };
                let jb = if cb == 1 { 0 } else { j };
                out.push(f(av[ia * ca + ja], bv[ib * cb + jb]));
            }
        }
        Tensor::raw_matrix(r, c, out)
    }

    /// Elementwise sum; either operand may broadcast along a unit dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), "add")
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(TensorError::Contract(format!(
                "concat needs inputs and axis < 2 (axis {axis})"
            )));
        }
        let first = dims2(self.value(inputs[0]), "concat")?;
        let mut total = 0;
        for &v in inputs {
            let d = dims2(self.value(v), "concat")?;
            let (other, other0) = if axis == 0 { (d.1, first.1) } else { (d.0, first.0) };
            if other != other0 {
                return Err(shape_err("concat", self.shape(inputs[0]), self.shape(v)));
            }
            total += if axis == 0 { d.0 } else { d.1 };
        }
        let t = if axis == 0 {
            let data: Vec<f64> = inputs
                .iter()
                .flat_map(|&v| self.value(v).data().iter().copied())
                .collect();
            Tensor::raw_matrix(total, first.1, data)?
        } else {
            let rows = first.0;
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row_slice(r));
                }
            }
            Tensor::raw_matrix(rows, total, data)?
        };
        self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "slice")?;
        let dim = if axis == 0 { r } else { c };
        if axis > 1 || start >= end || end > dim {
            return Err(shape_err("slice", self.shape(x), &[axis, start, end]));
        }
        let xv = self.value(x);
        let t = if axis == 0 {
            Tensor::raw_matrix(end - start, c, xv.data()[start * c..end * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&xv.row_slice(i)[start..end]);
            }
            Tensor::raw_matrix(r, end - start, data)?
        };
        self.push(t, Op::Slice { input: x, axis, start }, "slice")
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::raw(xv.shape().to_vec(), data)?;
        self.push(t, op, name)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, Op::Scale { input: x, factor }, "scale", |v| v * factor)
    }

    /// Softmax along `axis` (1 normalizes each row, 0 each column).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "softmax")?;
        if axis > 1 {
            return Err(shape_err("softmax", self.shape(x), &[axis]));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        let (outer, inner) = if axis == 1 { (r, c) } else { (c, r) };
        for o in 0..outer {
            let idx = |i: usize| if axis == 1 { o * c + i } else { i * c + o };
            let m = (0..inner).map(|i| xv[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..inner {
                let e = (xv[idx(i)] - m).exp();
                out[idx(i)] = e;
                z += e;
            }
            for i in 0..inner {
                out[idx(i)] /= z;
            }
        }
        self.push(Tensor::raw_matrix(r, c, out)?, Op::Softmax { input: x, axis }, "softmax")
    }

    fn reduce(&self, x: Var, axis: Option<usize>, name: &'static str) -> Result<Tensor> {
        let (r, c) = dims2(self.value(x), name)?;
        let xv = self.value(x);
        match axis {
            None => Tensor::raw_scalar(xv.data().iter().sum()),
            Some(0) => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(xv.row_slice(i)) {
                        *o += v;
                    }
                }
                Tensor::raw_matrix(1, c, out)
            }
            Some(1) => Tensor::raw_matrix(r, 1, (0..r).map(|i| xv.row_slice(i).iter().sum()).collect()),
            Some(a) => Err(shape_err(name, xv.shape(), &[a])),
        }
    }

    /// Sum over `axis` keeping the reduced dimension as 1, or over everything
    /// into a `1 x 1` scalar when `axis` is `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.reduce(x, axis, "sum")?;
        self.push(t, Op::Sum { input: x, axis }, "sum")
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let mut t = self.reduce(x, axis, "mean")?;
        let n = reduced_count(self.shape(x), axis) as f64;
        t.data_mut().iter_mut().for_each(|v| *v /= n);
        self.push(t, Op::Mean { input: x, axis }, "mean")
    }

    /// Row gather (embedding lookup when `x` is a table parameter).
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "gather")?;
        if indices.is_empty() {
            return Err(TensorError::Contract("gather with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather", self.shape(x), &[bad]));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(xv.row_slice(i));
        }
        let t = Tensor::raw_matrix(indices.len(), c, data)?;
        self.push(
            t,
            Op::Gather {
                input: x,
                indices: indices.to_vec(),
            },
            "gather",
        )
    }

    /// Mean binary cross-entropy between `logits` and constant `targets`,
    /// computed in the overflow-free form `max(x,0) - x*y + ln(1 + e^-|x|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let xv = self.value(logits);
        if xv.numel() != targets.len() {
            return Err(shape_err("bce_with_logits", xv.shape(), &[targets.len()]));
        }
        let n = targets.len() as f64;
        let total: f64 = xv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        self.push(
            Tensor::raw_scalar(total / n)?,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            "bce_with_logits",
        )
    }

    /// Max along `axis` (reduced dimension kept as 1). Ties go to the first
    /// maximal element.
    pub fn max_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "max_pool")?;
        if axis > 1 {
            return Err(shape_err("max_pool", self.shape(x), &[axis]));
        }
        let xv = self.value(x).data();
        let (outer, inner) = if axis == 0 { (c, r) } else { (r, c) };
        let mut argmax = Vec::with_capacity(outer);
        let mut out = Vec::with_capacity(outer);
        for o in 0..outer {
            let idx = |i: usize| if axis == 0 { i * c + o } else { o * c + i };
            let mut best = idx(0);
            for i in 1..inner {
                if xv[idx(i)] > xv[best] {
                    best = idx(i);
                }
            }
            argmax.push(best);
            out.push(xv[best]);
        }
        let t = if axis == 0 {
            Tensor::raw_matrix(1, c, out)?
        } else {
            Tensor::raw_matrix(r, 1, out)?
        };
        self.push(t, Op::MaxPool { input: x, argmax }, "max_pool")
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at train
    /// time. Identity when `rate == 0` or the graph is not training.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Contract(format!("dropout rate {rate} not in [0,1)")));
        }
        if !self.train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::raw(xv.shape().to_vec(), data)?;
        self.push(t, Op::Dropout { input: x, mask }, "dropout")
    }

    fn check_groups(&self, x: Var, groups: &[Vec<usize>], name: &'static str) -> Result<()> {
        let (r, c) = dims2(self.value(x), name)?;
        if c != 1 {
            return Err(shape_err(name, self.shape(x), &[r, 1]));
        }
        for g in groups {
            if g.is_empty() {
                return Err(TensorError::Contract(format!("{name}: empty group")));
            }
            if let Some(&bad) = g.iter().find(|&&i| i >= r) {
                return Err(shape_err(name, self.shape(x), &[bad]));
            }
        }
        Ok(())
    }

    /// Softmax of an `n x 1` column within each index group. Groups must be
    /// disjoint; entries outside every group come out as zero.
    pub fn segment_softmax(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        self.check_groups(x, groups, "segment_softmax")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        let mut seen = vec![false; xv.len()];
        for g in groups {
            let m = g.iter().map(|&i| xv[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in g {
                if std::mem::replace(&mut seen[i], true) {
                    return Err(TensorError::Contract("segment_softmax: overlapping groups".into()));
                }
                out[i] = (xv[i] - m).exp();
                z += out[i];
            }
            for &i in g {
                out[i] /= z;
            }
        }
        let t = Tensor::raw_matrix(out.len(), 1, out)?;
        self.push(
            t,
            Op::SegmentSoftmax {
                input: x,
                groups: groups.to_vec(),
            },
            "segment_softmax",
        )
    }

    /// Log-sum-exp of an `n x 1` column over each index group, giving a
    /// `groups.len() x 1` column. Groups may overlap.
    pub fn segment_logsumexp(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        self.check_groups(x, groups, "segment_logsumexp")?;
        if groups.is_empty() {
            return Err(TensorError::Contract("segment_logsumexp: no groups".into()));
        }
        let xv = self.value(x).data();
        let out: Vec<f64> = groups
            .iter()
            .map(|g| log_sum_exp(g.iter().map(|&i| xv[i])))
            .collect();
        let t = Tensor::raw_matrix(out.len(), 1, out)?;
        self.push(
            t,
            Op::SegmentLogSumExp {
                input: x,
                groups: groups.to_vec(),
            },
            "segment_logsumexp",
        )
    }

    /// Adds row `i` of `x` into output row `segments[i]`; the output has
    /// `count` rows, zero where no row maps.
    pub fn segment_sum(&mut self, x: Var, segments: &[usize], count: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "segment_sum")?;
        if segments.len() != r || segments.iter().any(|&s| s >= count) || count == 0 {
            return Err(shape_err("segment_sum", self.shape(x), &[segments.len(), count]));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; count * c];
        for (i, &s) in segments.iter().enumerate() {
            for (o, v) in out[s * c..(s + 1) * c].iter_mut().zip(xv.row_slice(i)) {
                *o += v;
            }
        }
        let t = Tensor::raw_matrix(count, c, out)?;
        self.push(
            t,
            Op::SegmentSum {
                input: x,
                segments: segments.to_vec(),
            },
            "segment_sum",
        )
    }

    /// Same row-major data viewed as `rows x cols`.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let xv = self.value(x);
        if rows * cols != xv.numel() || rows == 0 {
            return Err(shape_err("reshape", xv.shape(), &[rows, cols]));
        }
        let t = Tensor::raw_matrix(rows, cols, xv.data().to_vec())?;
        self.push(t, Op::Reshape { input: x }, "reshape")
    }

    /// Reverse pass from a scalar `loss`. Gradients are accumulated into the
    /// parameters of `params`; every trainable parameter ends up with a
    /// gradient buffer (zero when it is unreachable from `loss`).
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                let p = params.get_mut(id);
                if p.shape() != node.value.shape() {
                    return Err(shape_err("backward(param)", p.shape(), node.value.shape()));
                }
                let buf = p.grad.get_or_insert_with(|| vec![0.0; gy.len()]);
                for (b, g) in buf.iter_mut().zip(&gy) {
                    *b += g;
                }
                continue;
            }
            let mut contribs = self.local_grads(node, &gy)?;
            if self.fault == Some(node.op.kind()) {
                for (_, g) in contribs.iter_mut() {
                    g.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (v, g) in contribs {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for id in params.ids().collect::<Vec<_>>() {
            let p = params.get_mut(id);
            if p.requires_grad && p.grad.is_none() {
                p.grad = Some(vec![0.0; p.numel()]);
            }
        }
        Ok(())
    }

    fn local_grads(&self, node: &Node, gy: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let dims = |v: Var| {
            let t = &self.nodes[v.0].value;
            (t.rows(), t.cols())
        };
        Ok(match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = dims(*a);
                let n = dims(*b).1;
                let (av, bv) = (val(*a), val(*b));
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &gy[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(g, b)| g * b).sum();
                        let x = av[i * k + p];
                        if x != 0.0 {
                            for (gbv, g) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *gbv += x * g;
                            }
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let is_mul = matches!(node.op, Op::Mul(..));
                let (r, c) = (node.value.rows(), node.value.cols());
                let (ra, ca) = dims(*a);
                let (rb, cb) = dims(*b);
                let (av, bv) = (val(*a), val(*b));
                let mut ga = vec![0.0; ra * ca];
                let mut gb = vec![0.0; rb * cb];
                for i in 0..r {
                    for j in 0..c {
                        let g = gy[i * c + j];
                        let ia = if ra == 1 { 0 } else { i } * ca + if ca == 1 { 0 } else { j };
                        let ib = if rb == 1 { 0 } else { i } * cb + if cb == 1 { 0 } else { j };
                        if is_mul {
                            ga[ia] += g * bv[ib];
                            gb[ib] += g * av[ia];
                        } else {
                            ga[ia] += g;
                            gb[ib] += g;
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Concat { inputs, axis } => {
                let cols = node.value.cols();
                let mut out = Vec::with_capacity(inputs.len());
                let mut offset = 0;
                for &v in inputs {
                    let (r, c) = dims(v);
                    let g = if *axis == 0 {
                        gy[offset * cols..(offset + r) * cols].to_vec()
                    } else {
                        let mut g = Vec::with_capacity(r * c);
                        for i in 0..r {
                            g.extend_from_slice(&gy[i * cols + offset..i * cols + offset + c]);
                        }
                        g
                    };
                    offset += if *axis == 0 { r } else { c };
                    out.push((v, g));
                }
                out
            }
            Op::Slice { input, axis, start } => {
                let (r, c) = dims(*input);
                let mut g = vec![0.0; r * c];
                let (sr, sc) = (node.value.rows(), node.value.cols());
                for i in 0..sr {
                    for j in 0..sc {
                        let (ii, jj) = if *axis == 0 { (i + start, j) } else { (i, j + start) };
                        g[ii * c + jj] = gy[i * sc + j];
                    }
                }
                vec![(*input, g)]
            }
            Op::Sigmoid(x) => vec![(*x, gy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())],
            Op::Tanh(x) => vec![(*x, gy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect())],
            Op::Relu(x) => vec![(
                *x,
                gy.iter()
                    .zip(val(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            )],
            Op::Scale { input, factor } => vec![(*input, gy.iter().map(|g| g * factor).collect())],
            Op::Softmax { input, axis } => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let mut g = vec![0.0; r * c];
                let (outer, inner) = if *axis == 1 { (r, c) } else { (c, r) };
                for o in 0..outer {
                    let idx = |i: usize| if *axis == 1 { o * c + i } else { i * c + o };
                    let dot: f64 = (0..inner).map(|i| gy[idx(i)] * y[idx(i)]).sum();
                    for i in 0..inner {
                        g[idx(i)] = y[idx(i)] * (gy[idx(i)] - dot);
                    }
                }
                vec![(*input, g)]
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let (r, c) = dims(*input);
                let denom = if matches!(node.op, Op::Mean { .. }) {
                    reduced_count(&[r, c], *axis) as f64
                } else {
                    1.0
                };
                let g = (0..r * c)
                    .map(|k| {
                        let (i, j) = (k / c, k % c);
                        let src = match axis {
                            None => gy[0],
                            Some(0) => gy[j],
                            _ => gy[i],
                        };
                        src / denom
                    })
                    .collect();
                vec![(*input, g)]
            }
            Op::Gather { input, indices } => {
                let (r, c) = dims(*input);
                let mut g = vec![0.0; r * c];
                for (k, &i) in indices.iter().enumerate() {
                    for (gv, s) in g[i * c..(i + 1) * c].iter_mut().zip(&gy[k * c..(k + 1) * c]) {
                        *gv += s;
                    }
                }
                vec![(*input, g)]
            }
            Op::BceWithLogits { logits, targets } => {
                let n = targets.len() as f64;
                let g = val(*logits)
                    .iter()
                    .zip(targets)
                    .map(|(&x, &t)| gy[0] * (sigmoid(x) - t) / n)
                    .collect();
                vec![(*logits, g)]
            }
            Op::MaxPool { input, argmax, .. } => {
                let (r, c) = dims(*input);
                let mut g = vec![0.0; r * c];
                for (k, &src) in argmax.iter().enumerate() {
                    g[src] += gy[k];
                }
                vec![(*input, g)]
            }
            Op::Dropout { input, mask } => {
                vec![(*input, gy.iter().zip(mask).map(|(g, m)| g * m).collect())]
            }
            Op::SegmentSoftmax { input, groups } => {
                let mut g = vec![0.0; y.len()];
                for grp in groups {
                    let dot: f64 = grp.iter().map(|&i| gy[i] * y[i]).sum();
                    for &i in grp {
                        g[i] = y[i] * (gy[i] - dot);
                    }
                }
                vec![(*input, g)]
            }
            Op::SegmentLogSumExp { input, groups } => {
                let xv = val(*input);
                let mut g = vec![0.0; xv.len()];
                for (k, grp) in groups.iter().enumerate() {
                    for &i in grp {
                        g[i] += gy[k] * (xv[i] - y[k]).exp();
                    }
                }
                vec![(*input, g)]
            }
            Op::SegmentSum { input, segments } => {
                let (r, c) = dims(*input);
                let mut g = Vec::with_capacity(r * c);
                for &s in segments {
                    g.extend_from_slice(&gy[s * c..(s + 1) * c]);
                }
                vec![(*input, g)]
            }
            Op::Reshape { input } => vec![(*input, gy.to_vec())],
        })
    }
}

fn reduced_count(shape: &[usize], axis: Option<usize>) -> usize {
    match axis {
        None => shape.iter().product(),
        Some(a) => shape[a],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0, 0.0]).unwrap());
        let s = g.softmax(x, 1).unwrap();
        assert!(close(g.value(s).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.constant(
            Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
        );
        let data = vec![1.5, -2.0, 0.25, 3.0, 7.0, -1.0];
        let x = g.constant(Tensor::matrix(3, 2, data.clone()).unwrap());
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
        assert_eq!(g.shape(y), &[3, 2]);
    }

    #[test]
    fn bce_logit_zero_label_one_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0).unwrap());
        let l = g.bce_with_logits(x, &[1.0]).unwrap();
        assert!((g.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut ps = ParamSet::new();
        let id = ps
            .add("x", Tensor::row(vec![1.0, -2.0, 3.0]).unwrap().with_grad())
            .unwrap();
        let mut g = Graph::new();
        let x = g.param(&ps, id);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq, None).unwrap();
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(id).grad.as_deref().unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn detached_parameter_gets_zero_grad() {
        let mut ps = ParamSet::new();
        let p = ps.add("p", Tensor::row(vec![1.0, 2.0]).unwrap().with_grad()).unwrap();
        let q = ps.add("q", Tensor::row(vec![3.0]).unwrap().with_grad()).unwrap();
        let mut g = Graph::new();
        let qv = g.param(&ps, q);
        let loss = g.sum(qv, None).unwrap();
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(p).grad.as_deref().unwrap(), &[0.0, 0.0]);
        assert_eq!(ps.get(q).grad.as_deref().unwrap(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut ps = ParamSet::new();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0]).unwrap());
        assert!(matches!(g.backward(x, &mut ps), Err(TensorError::Contract(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(TensorError::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let c = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn numerics_check_catches_overflow() {
        let mut g = Graph::new();
        g.set_check_numerics(true);
        let x = g.constant(Tensor::scalar(1e300).unwrap());
        let y = g.mul(x, x);
        assert!(matches!(y, Err(TensorError::Numerics { .. })));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0]).unwrap());
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);
        let mut t = Graph::training(ChaCha8Rng::seed_from_u64(3));
        let x = t.constant(Tensor::row(vec![1.0, 2.0]).unwrap());
        assert_eq!(t.dropout(x, 0.0).unwrap(), x);
        let d = t.dropout(x, 0.5).unwrap();
        assert!(t.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0 || v == 4.0));
    }

    #[test]
    fn segment_ops_forward() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::column(vec![0.0, 0.0, 1.0, 5.0]).unwrap());
        let s = g.segment_softmax(x, &[vec![0, 1], vec![3]]).unwrap();
        assert!(close(g.value(s).data(), &[0.5, 0.5, 0.0, 1.0], 1e-15));
        let l = g.segment_logsumexp(x, &[vec![0, 1], vec![2]]).unwrap();
        assert!(close(g.value(l).data(), &[std::f64::consts::LN_2, 1.0], 1e-15));
        let m = g.constant(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let ss = g.segment_sum(m, &[1, 1, 0], 3).unwrap();
        assert_eq!(g.value(ss).data(), &[5., 6., 4., 6., 0., 0.]);
        assert!(g.segment_softmax(x, &[vec![0, 1], vec![1]]).is_err());
    }
}
