//! Post-norm Transformer encoder and decoder blocks.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{xavier_uniform, Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(format!("{prefix}.weight"), xavier_uniform(input, output, rng));
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(1, output));
        Self { weight, bias }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        let y = ctx.graph.matmul(x, w)?;
        ctx.graph.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, d_model: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Tensor::ones(1, d_model)),
            shift: store.add(format!("{prefix}.shift"), Tensor::zeros(1, d_model)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (g, s) = (ctx.p(self.gain), ctx.p(self.shift));
        ctx.graph.layer_norm(x, g, s)
    }
}

/// Scaled dot-product attention with `d_model / heads` wide heads.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    heads: Vec<[ParamId; 3]>,
    output: ParamId,
    head_dim: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!("d_model {d_model} is not divisible into {heads} heads")));
        }
        let head_dim = d_model / heads;
        let heads = (0..heads)
            .map(|h| {
                ["query", "key", "value"]
                    .map(|role| store.add(format!("{prefix}.head{h}.{role}"), xavier_uniform(d_model, head_dim, rng)))
            })
            .collect();
        let output = store.add(format!("{prefix}.output"), xavier_uniform(d_model, d_model, rng));
        Ok(Self { heads, output, head_dim, d_model })
    }

    /// Queries from `query_src`, keys and values from `memory`. With
    /// `causal`, position `i` attends to memory positions `≤ i` only.
    pub fn forward(&self, ctx: &mut Ctx<'_>, query_src: Var, memory: Var, causal: bool) -> Result<Var> {
        let (n, d) = ctx.graph.shape(query_src);
        let (m, md) = ctx.graph.shape(memory);
        if d != self.d_model || md != self.d_model {
            return Err(Error::Shape(format!(
                "attention over width {}: got {n}x{d} queries and {m}x{md} memory",
                self.d_model
            )));
        }
        let mask = causal.then(|| Tensor::from_fn(n, m, |i, j| if j > i { f64::NEG_INFINITY } else { 0.0 }));
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads.len());
        for [wq, wk, wv] in &self.heads {
            let (wq, wk, wv) = (ctx.p(*wq), ctx.p(*wk), ctx.p(*wv));
            let g = &mut *ctx.graph;
            let q = g.matmul(query_src, wq)?;
            let k = g.matmul(memory, wk)?;
            let v = g.matmul(memory, wv)?;
            let scores = g.matmul_nt(q, k)?;
            let mut scores = g.scale(scores, scale);
            if let Some(mask) = &mask {
                let mv = g.constant(mask.clone());
                scores = g.add(scores, mv)?;
            }
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, v)?);
        }
        let wo = ctx.p(self.output);
        let concat = if outs.len() == 1 { outs[0] } else { ctx.graph.concat_cols(&outs)? };
        ctx.graph.matmul(concat, wo)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, prefix: &str, d_model: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inner: Linear::new(store, &format!("{prefix}.inner"), d_model, width, rng),
            outer: Linear::new(store, &format!("{prefix}.outer"), width, d_model, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.inner.forward(ctx, x)?;
        let h = ctx.graph.relu(h);
        self.outer.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        ffn_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{prefix}.self_attn"), d_model, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{prefix}.norm1"), d_model),
            ffn: FeedForward::new(store, &format!("{prefix}.ffn"), d_model, ffn_width, rng),
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), d_model),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let a = self.attention.forward(ctx, x, x, false)?;
        let r = ctx.graph.add(x, a)?;
        let x1 = self.norm1.forward(ctx, r)?;
        let f = self.ffn.forward(ctx, x1)?;
        let r = ctx.graph.add(x1, f)?;
        self.norm2.forward(ctx, r)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        ffn_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            self_attention: MultiHeadAttention::new(store, &format!("{prefix}.self_attn"), d_model, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{prefix}.norm1"), d_model),
            cross_attention: MultiHeadAttention::new(store, &format!("{prefix}.cross_attn"), d_model, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), d_model),
            ffn: FeedForward::new(store, &format!("{prefix}.ffn"), d_model, ffn_width, rng),
            norm3: LayerNorm::new(store, &format!("{prefix}.norm3"), d_model),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, memory: Var) -> Result<Var> {
        let a = self.self_attention.forward(ctx, x, x, true)?;
        let r = ctx.graph.add(x, a)?;
        let x1 = self.norm1.forward(ctx, r)?;
        let c = self.cross_attention.forward(ctx, x1, memory, false)?;
        let r = ctx.graph.add(x1, c)?;
        let x2 = self.norm2.forward(ctx, r)?;
        let f = self.ffn.forward(ctx, x2)?;
        let r = ctx.graph.add(x2, f)?;
        self.norm3.forward(ctx, r)
    }
}
