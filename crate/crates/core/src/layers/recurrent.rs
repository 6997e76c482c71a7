use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{xavier_with_fans, Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Single-layer unidirectional LSTM.
///
/// Gate columns are packed `[input | forget | cell | output]`, each `hidden`
/// wide. Forget-gate biases start at 1.0, everything else at 0.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    input: usize,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let gates = 4 * hidden;
        let input_weights = store.add(format!("{prefix}.w_ih"), xavier_with_fans(input, gates, input, hidden, rng));
        let recurrent_weights =
            store.add(format!("{prefix}.w_hh"), xavier_with_fans(hidden, gates, hidden, hidden, rng));
        let mut b = Tensor::zeros(1, gates);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        let bias = store.add(format!("{prefix}.bias"), b);
        Self { input_weights, recurrent_weights, bias, input, hidden }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// Column range of one gate inside the packed `4·hidden` layout.
    pub fn gate_columns(&self, gate: Gate) -> std::ops::Range<usize> {
        let h = self.hidden;
        let k = gate as usize;
        k * h..(k + 1) * h
    }

    /// Runs the recurrence over the rows of `x` and returns every hidden
    /// state, `n × hidden`. `initial` is `(h0, c0)`, zeros when absent.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, initial: Option<(Tensor, Tensor)>) -> Result<Var> {
        let (n, d) = ctx.graph.shape(x);
        if d != self.input {
            return Err(Error::Shape(format!("lstm expects {} input columns, got {d}", self.input)));
        }
        let h = self.hidden;
        let (h0, c0) = initial.unwrap_or_else(|| (Tensor::zeros(1, h), Tensor::zeros(1, h)));
        if h0.shape() != (1, h) || c0.shape() != (1, h) {
            return Err(Error::Shape(format!("lstm initial state must be 1x{h}")));
        }
        let (w_ih, w_hh, b) = (ctx.p(self.input_weights), ctx.p(self.recurrent_weights), ctx.p(self.bias));
        let g = &mut *ctx.graph;
        let projected = g.matmul(x, w_ih)?;
        let projected = g.add_row(projected, b)?;
        let mut hidden = g.constant(h0);
        let mut cell = g.constant(c0);
        let mut outputs = Vec::with_capacity(n);
        for t in 0..n {
            let xt = g.slice_rows(projected, t, t + 1)?;
            let rec = g.matmul(hidden, w_hh)?;
            let z = g.add(xt, rec)?;
            let gates = g.sigmoid(z);
            let i = g.slice_cols(gates, 0, h)?;
            let f = g.slice_cols(gates, h, 2 * h)?;
            let o = g.slice_cols(gates, 3 * h, 4 * h)?;
            let cand = g.slice_cols(z, 2 * h, 3 * h)?;
            let cand = g.tanh(cand);
            let keep = g.mul(f, cell)?;
            let write = g.mul(i, cand)?;
            cell = g.add(keep, write)?;
            let squashed = g.tanh(cell);
            hidden = g.mul(o, squashed)?;
            outputs.push(hidden);
        }
        g.concat_rows(&outputs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}
