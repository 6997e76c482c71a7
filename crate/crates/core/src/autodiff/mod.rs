//! Define-by-run reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every operation appends one node holding its
//! output value and enough information to push gradients back to its
//! inputs. Inputs are always recorded before outputs, so `backward` is a
//! single sweep over the tape in reverse recording order. Graphs are cheap
//! and meant to be rebuilt for every forward pass.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the output value `y`.
    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
}

/// Operation families, used to name nodes in diagnostics and to target the
/// backward-corruption hook.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Elementwise,
    Scale,
    AddRowBroadcast,
    Activation,
    SoftmaxRows,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    Transpose,
    InterleaveRows,
    BlockWeightedSum,
    Conv1dTime,
    Dropout,
    LayerNorm,
    Reduce,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Elementwise,
        OpKind::Scale,
        OpKind::AddRowBroadcast,
        OpKind::Activation,
        OpKind::SoftmaxRows,
        OpKind::ConcatRows,
        OpKind::ConcatCols,
        OpKind::SliceRows,
        OpKind::SliceCols,
        OpKind::Transpose,
        OpKind::InterleaveRows,
        OpKind::BlockWeightedSum,
        OpKind::Conv1dTime,
        OpKind::Dropout,
        OpKind::LayerNorm,
        OpKind::Reduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Elementwise => "elementwise",
            OpKind::Scale => "scale",
            OpKind::AddRowBroadcast => "add_row",
            OpKind::Activation => "activation",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::ConcatRows => "concat_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceRows => "slice_rows",
            OpKind::SliceCols => "slice_cols",
            OpKind::Transpose => "transpose",
            OpKind::InterleaveRows => "interleave_rows",
            OpKind::BlockWeightedSum => "block_weighted_sum",
            OpKind::Conv1dTime => "conv1d_time",
            OpKind::Dropout => "dropout",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Reduce => "reduce",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown operation '{s}' (one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Elementwise(ElementwiseKind, Var, Var),
    Scale(Var, f64),
    AddRowBroadcast(Var, Var),
    Activation(Activation, Var),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    InterleaveRows(Vec<Var>),
    BlockWeightedSum { blocks: Var, weights: Var },
    Conv1dTime { input: Var, kernels: Var, bias: Var, stride: usize },
    Dropout { input: Var, mask: Vec<f64> },
    LayerNorm { input: Var, gain: Var, shift: Var, normed: Tensor, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) | Op::MatMulNt(..) => OpKind::MatMul,
            Op::Elementwise(..) => OpKind::Elementwise,
            Op::Scale(..) => OpKind::Scale,
            Op::AddRowBroadcast(..) => OpKind::AddRowBroadcast,
            Op::Activation(..) => OpKind::Activation,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::Transpose(_) => OpKind::Transpose,
            Op::InterleaveRows(_) => OpKind::InterleaveRows,
            Op::BlockWeightedSum { .. } => OpKind::BlockWeightedSum,
            Op::Conv1dTime { .. } => OpKind::Conv1dTime,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Sum(_) | Op::Mean(_) => OpKind::Reduce,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    corrupt: Option<OpKind>,
}

fn grad_slot<'g>(grads: &'g mut [Option<Tensor>], nodes: &[Node], v: Var) -> &'g mut Tensor {
    let (r, c) = nodes[v.0].value.shape();
    grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scales the gradients that operations of `kind` pass back to
    /// their inputs by 1.01, so a gradient check must flag them.
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.corrupt = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// First node (in recording order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(Var, OpKind)> {
        self.nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()).map(|(i, n)| (Var(i), n.op.kind()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.matmul(bv)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err("matmul_nt", av.shape(), bv.shape()));
        }
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        gemm_nt(av, bv, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: ElementwiseKind) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("elementwise", av.shape(), bv.shape()));
        }
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            ElementwiseKind::Mul => |x, y| x * y,
        };
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Elementwise(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.requires_grad(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Adds a `1×c` row to every row of an `r×c` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av.shape(), rv.shape()));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(out, Op::AddRowBroadcast(a, row), rg))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = self.value(a).map(|x| kind.apply(x));
        let rg = self.requires_grad(a);
        self.push(out, Op::Activation(kind, a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let rg = self.requires_grad(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat_rows of nothing".into()));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", self.shape(first), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat_cols of nothing".into()));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", self.shape(first), v.shape()));
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, end)?;
        let rg = self.requires_grad(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::Bounds(format!(
                "column range {start}..{end} outside tensor with {} columns",
                av.cols()
            )));
        }
        let out = Tensor::from_fn(av.rows(), end - start, |r, c| av.get(r, start + c));
        let rg = self.requires_grad(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.requires_grad(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Stacks `k` equally shaped `n×d` tensors time-major: output row
    /// `t·k + j` is row `t` of part `j`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("interleave_rows of nothing".into()));
        };
        let (n, d) = self.shape(first);
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p) != (n, d)) {
            return Err(shape_err("interleave_rows", (n, d), self.shape(bad)));
        }
        let k = parts.len();
        let mut out = Tensor::zeros(k * n, d);
        for t in 0..n {
            for (j, &p) in parts.iter().enumerate() {
                out.row_mut(t * k + j).copy_from_slice(self.nodes[p.0].value.row(t));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::InterleaveRows(parts.to_vec()), rg))
    }

    /// Weighted sum over each block of `k` consecutive rows.
    ///
    /// `blocks` is `(k·n)×d`; `weights` is `k×1` (one weight vector for every
    /// block) or `k×n` (column `t` weights block `t`). Output row `t` is
    /// `Σ_j weights[j][t] · blocks[t·k + j]`, i.e. the transpose of
    /// `blockᵀ · w`.
    pub fn block_weighted_sum(&mut self, blocks: Var, weights: Var) -> Result<Var> {
        let (bv, wv) = (self.value(blocks), self.value(weights));
        let k = wv.rows();
        if k == 0 || bv.rows() % k != 0 {
            return Err(shape_err("block_weighted_sum", bv.shape(), wv.shape()));
        }
        let n = bv.rows() / k;
        if wv.cols() != 1 && wv.cols() != n {
            return Err(shape_err("block_weighted_sum", bv.shape(), wv.shape()));
        }
        let per_block = wv.cols() != 1;
        let mut out = Tensor::zeros(n, bv.cols());
        for t in 0..n {
            let col = if per_block { t } else { 0 };
            for j in 0..k {
                let w = wv.get(j, col);
                let src = bv.row(t * k + j);
                for (o, s) in out.row_mut(t).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let rg = self.any_grad(&[blocks, weights]);
        Ok(self.push(out, Op::BlockWeightedSum { blocks, weights }, rg))
    }

    /// Non-overlapping block convolution along time.
    ///
    /// `input` is `(s·n)×d`, `kernels` is `k×(s·d)` (row `j` is kernel `j`
    /// flattened row-major from `s×d`), `bias` is `1×k`. Output row `t`,
    /// channel `j` is the Frobenius inner product of input block `t` with
    /// kernel `j`, plus `bias[j]`.
    pub fn conv1d_time(&mut self, input: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        let (iv, kv, bv) = (self.value(input), self.value(kernels), self.value(bias));
        if stride == 0 || iv.rows() % stride != 0 {
            return Err(Error::Shape(format!(
                "conv1d_time: {} input rows not divisible by stride {stride}",
                iv.rows()
            )));
        }
        let width = stride * iv.cols();
        if kv.cols() != width {
            return Err(shape_err("conv1d_time kernels", (stride, iv.cols()), kv.shape()));
        }
        if bv.shape() != (1, kv.rows()) {
            return Err(shape_err("conv1d_time bias", (1, kv.rows()), bv.shape()));
        }
        let n = iv.rows() / stride;
        let blocks = Tensor::new(n, width, iv.data().to_vec())?;
        let mut out = Tensor::zeros(n, kv.rows());
        gemm_nt(&blocks, kv, &mut out);
        for t in 0..n {
            for (o, b) in out.row_mut(t).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.any_grad(&[input, kernels, bias]);
        Ok(self.push(out, Op::Conv1dTime { input, kernels, bias, stride }, rg))
    }

    /// Inverted dropout: in training mode every entry is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`; otherwise
    /// the input passes through unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let av = &self.nodes[a.0].value;
        let mask: Vec<f64> = (0..av.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(out, Op::Dropout { input: a, mask }, rg))
    }

    /// Normalizes each row to zero mean and unit variance, then applies a
    /// per-column gain and shift (both `1×d`).
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var) -> Result<Var> {
        let (xv, gv, sv) = (self.value(input), self.value(gain), self.value(shift));
        let d = xv.cols();
        if gv.shape() != (1, d) || sv.shape() != (1, d) {
            return Err(shape_err("layer_norm", xv.shape(), gv.shape()));
        }
        let mut normed = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = normed.row_mut(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let mut out = normed.clone();
        for r in 0..out.rows() {
            for ((o, g), s) in out.row_mut(r).iter_mut().zip(gv.data()).zip(sv.data()) {
                *o = *o * g + s;
            }
        }
        let rg = self.any_grad(&[input, gain, shift]);
        Ok(self.push(out, Op::LayerNorm { input, gain, shift, normed, inv_std }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::full(1, 1, s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len() as f64;
        let rg = self.requires_grad(a);
        self.push(Tensor::full(1, 1, m), Op::Mean(a), rg)
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a `1×1` loss. Gradients accumulate into every node
    /// that requires one; leaf gradients stay readable through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Shape(format!("backward needs a 1x1 loss, got {}x{}", shape.0, shape.1)));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::ones(1, 1));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(mut g) = self.grads[i].take() else { continue };
            if self.corrupt == Some(self.nodes[i].op.kind()) {
                g = g.map(|x| x * 1.01);
            }
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let wants = |v: &Var| nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(a) {
                    gemm_nt(g, &nodes[b.0].value, grad_slot(grads, nodes, *a));
                }
                if wants(b) {
                    gemm_tn(&nodes[a.0].value, g, grad_slot(grads, nodes, *b));
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                if wants(a) {
                    gemm_nn(g, &nodes[b.0].value, grad_slot(grads, nodes, *a));
                }
                if wants(b) {
                    gemm_tn(g, &nodes[a.0].value, grad_slot(grads, nodes, *b));
                }
            }
            Op::Elementwise(kind, a, b) => {
                let (a, b) = (*a, *b);
                match kind {
                    ElementwiseKind::Add => {
                        if wants(&a) {
                            grad_slot(grads, nodes, a).add_assign(g);
                        }
                        if wants(&b) {
                            grad_slot(grads, nodes, b).add_assign(g);
                        }
                    }
                    ElementwiseKind::Sub => {
                        if wants(&a) {
                            grad_slot(grads, nodes, a).add_assign(g);
                        }
                        if wants(&b) {
                            grad_slot(grads, nodes, b).axpy(-1.0, g);
                        }
                    }
                    ElementwiseKind::Mul => {
                        let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                        if wants(&a) {
                            let t = grad_slot(grads, nodes, a);
                            for ((o, gi), bi) in t.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                                *o += gi * bi;
                            }
                        }
                        if wants(&b) {
                            let t = grad_slot(grads, nodes, b);
                            for ((o, gi), ai) in t.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                                *o += gi * ai;
                            }
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                if wants(a) {
                    grad_slot(grads, nodes, *a).axpy(*f, g);
                }
            }
            Op::AddRowBroadcast(a, row) => {
                if wants(a) {
                    grad_slot(grads, nodes, *a).add_assign(g);
                }
                if wants(row) {
                    let t = grad_slot(grads, nodes, *row);
                    for r in 0..g.rows() {
                        for (o, x) in t.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Activation(kind, a) => {
                if wants(a) {
                    let y = &node.value;
                    let t = grad_slot(grads, nodes, *a);
                    for ((o, gi), yi) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gi * kind.derivative(*yi);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(a) {
                    let y = &node.value;
                    let t = grad_slot(grads, nodes, *a);
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, yi), gi) in t.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = nodes[p.0].value.rows();
                    if wants(p) {
                        let cols = g.cols();
                        let src = &g.data()[offset * cols..(offset + rows) * cols];
                        for (o, x) in grad_slot(grads, nodes, *p).data_mut().iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = nodes[p.0].value.cols();
                    if wants(p) {
                        let t = grad_slot(grads, nodes, *p);
                        for r in 0..g.rows() {
                            for (o, x) in t.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + cols]) {
                                *o += x;
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::SliceRows(a, start) => {
                if wants(a) {
                    let cols = g.cols();
                    let t = grad_slot(grads, nodes, *a);
                    let dst = &mut t.data_mut()[start * cols..start * cols + g.len()];
                    for (o, x) in dst.iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if wants(a) {
                    let t = grad_slot(grads, nodes, *a);
                    for r in 0..g.rows() {
                        for (o, x) in t.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    grad_slot(grads, nodes, *a).add_assign(&g.transpose());
                }
            }
            Op::InterleaveRows(parts) => {
                let k = parts.len();
                for (j, p) in parts.iter().enumerate() {
                    if wants(p) {
                        let t = grad_slot(grads, nodes, *p);
                        for r in 0..t.rows() {
                            for (o, x) in t.row_mut(r).iter_mut().zip(g.row(r * k + j)) {
                                *o += x;
                            }
                        }
                    }
                }
            }
            Op::BlockWeightedSum { blocks, weights } => {
                let (bv, wv) = (&nodes[blocks.0].value, &nodes[weights.0].value);
                let k = wv.rows();
                let n = g.rows();
                let col = |t: usize| if wv.cols() != 1 { t } else { 0 };
                if wants(blocks) {
                    let tb = grad_slot(grads, nodes, *blocks);
                    for t in 0..n {
                        for j in 0..k {
                            let w = wv.get(j, col(t));
                            for (o, x) in tb.row_mut(t * k + j).iter_mut().zip(g.row(t)) {
                                *o += w * x;
                            }
                        }
                    }
                }
                if wants(weights) {
                    let tw = grad_slot(grads, nodes, *weights);
                    for t in 0..n {
                        for j in 0..k {
                            let dot: f64 = bv.row(t * k + j).iter().zip(g.row(t)).map(|(a, b)| a * b).sum();
                            let c = col(t);
                            let cur = tw.get(j, c);
                            tw.set(j, c, cur + dot);
                        }
                    }
                }
            }
            Op::Conv1dTime { input, kernels, bias, stride } => {
                let (iv, kv) = (&nodes[input.0].value, &nodes[kernels.0].value);
                let n = g.rows();
                let width = stride * iv.cols();
                if wants(input) {
                    let t = grad_slot(grads, nodes, *input);
                    let mut dblocks = Tensor::zeros(n, width);
                    gemm_nn(g, kv, &mut dblocks);
                    for (o, x) in t.data_mut().iter_mut().zip(dblocks.data()) {
                        *o += x;
                    }
                }
                if wants(kernels) {
                    let blocks = Tensor::new(n, width, iv.data().to_vec()).expect("conv block view");
                    gemm_tn(g, &blocks, grad_slot(grads, nodes, *kernels));
                }
                if wants(bias) {
                    let t = grad_slot(grads, nodes, *bias);
                    for r in 0..n {
                        for (o, x) in t.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if wants(input) {
                    let t = grad_slot(grads, nodes, *input);
                    for ((o, gi), m) in t.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *o += gi * m;
                    }
                }
            }
            Op::LayerNorm { input, gain, shift, normed, inv_std } => {
                let gv = &nodes[gain.0].value;
                let d = normed.cols();
                if wants(input) {
                    let t = grad_slot(grads, nodes, *input);
                    let mut dxhat = vec![0.0; d];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let (xh, gr) = (normed.row(r), g.row(r));
                        for c in 0..d {
                            dxhat[c] = gr[c] * gv.data()[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for (c, o) in t.row_mut(r).iter_mut().enumerate() {
                            *o += inv * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
                if wants(gain) {
                    let t = grad_slot(grads, nodes, *gain);
                    for r in 0..normed.rows() {
                        for ((o, x), gi) in t.data_mut().iter_mut().zip(normed.row(r)).zip(g.row(r)) {
                            *o += x * gi;
                        }
                    }
                }
                if wants(shift) {
                    let t = grad_slot(grads, nodes, *shift);
                    for r in 0..g.rows() {
                        for (o, gi) in t.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let s = g.get(0, 0);
                    for o in grad_slot(grads, nodes, *a).data_mut() {
                        *o += s;
                    }
                }
            }
            Op::Mean(a) => {
                if wants(a) {
                    let t = grad_slot(grads, nodes, *a);
                    let s = g.get(0, 0) / t.len() as f64;
                    for o in t.data_mut() {
                        *o += s;
                    }
                }
            }
        }
    }
}
