//! Block convolution over time followed by two LSTMs, added back onto the
//! fused features.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::recurrent::{Gate, Lstm};
use crate::params::{xavier_with_fans, Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const CONV_KERNELS: usize = 16;
pub const LSTM_HIDDEN: usize = 32;

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    stride: usize,
    d_model: usize,
    pub kernels: ParamId,
    pub conv_bias: ParamId,
    pub lstm1: Lstm,
    pub lstm2: Lstm,
    dropout: f64,
}

impl ResidualBlock {
    /// `stride` is both the kernel height and the step: 3 after the neighbor
    /// attention branches, 2 at the encoder/decoder junction.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        stride: usize,
        d_model: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("residual block stride must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Param(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let width = stride * d_model;
        let kernels = store
            .add(format!("{prefix}.conv.kernels"), xavier_with_fans(CONV_KERNELS, width, width, CONV_KERNELS, rng));
        let conv_bias = store.add(format!("{prefix}.conv.bias"), Tensor::zeros(1, CONV_KERNELS));
        let lstm1 = Lstm::new(store, &format!("{prefix}.lstm1"), CONV_KERNELS, LSTM_HIDDEN, rng);
        let lstm2 = Lstm::new(store, &format!("{prefix}.lstm2"), LSTM_HIDDEN, d_model, rng);
        Ok(Self { stride, d_model, kernels, conv_bias, lstm1, lstm2, dropout })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// `(height, width)` of each convolution kernel.
    pub fn kernel_shape(&self) -> (usize, usize) {
        (self.stride, self.d_model)
    }

    pub fn kernel_count(&self) -> usize {
        CONV_KERNELS
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// Zeroes the convolution and the second LSTM's cell-candidate path, so
    /// the network branch emits exactly zero and the block reduces to its
    /// residual input.
    pub fn annihilate(&self, store: &mut ParamStore) -> Result<()> {
        let (r, c) = store.get(self.kernels).shape();
        store.set(self.kernels, Tensor::zeros(r, c))?;
        store.set(self.conv_bias, Tensor::zeros(1, CONV_KERNELS))?;
        let cols = self.lstm2.gate_columns(Gate::Cell);
        for id in [self.lstm2.input_weights, self.lstm2.recurrent_weights, self.lstm2.bias] {
            let t = store.get_mut(id);
            for r in 0..t.rows() {
                for c in cols.clone() {
                    t.set(r, c, 0.0);
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, fused: Var, blocks: Var) -> Result<Var> {
        let (n, d) = ctx.graph.shape(fused);
        let (rows, bd) = ctx.graph.shape(blocks);
        if d != self.d_model || bd != self.d_model || rows != self.stride * n {
            return Err(Error::Shape(format!(
                "residual block (stride {}): fused {n}x{d}, blocks {rows}x{bd}",
                self.stride
            )));
        }
        let (k, b) = (ctx.p(self.kernels), ctx.p(self.conv_bias));
        let conv = ctx.graph.conv1d_time(blocks, k, b, self.stride)?;
        let h1 = self.lstm1.forward(ctx, conv, None)?;
        let h1 = ctx.dropout(h1, self.dropout)?;
        let h2 = self.lstm2.forward(ctx, h1, None)?;
        let h2 = ctx.dropout(h2, self.dropout)?;
        ctx.graph.add(h2, fused)
    }
}
