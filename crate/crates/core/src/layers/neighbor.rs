//! Attention of the window center onto one of its neighboring parts.
//!
//! Queries and values are projections of the center encoding; keys come from
//! the neighbor (forward or backward part). Each head produces a full
//! `n × d_model` value mix, so the concatenated heads are `p·d_model` wide
//! before the output projection back to `d_model`.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{xavier_uniform, Ctx, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct NeighborHead {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug)]
pub struct NeighborAttention {
    heads: Vec<NeighborHead>,
    output: ParamId,
    d_model: usize,
    d_attn: usize,
}

pub struct NeighborAttentionOutput {
    pub output: Var,
    /// Row-stochastic `n × n` attention weights, one per head.
    pub weights: Vec<Var>,
}

impl NeighborAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_attn: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || d_attn == 0 {
            return Err(Error::Config("neighbor attention needs at least one head and d_attn > 0".into()));
        }
        let heads = (0..heads)
            .map(|h| NeighborHead {
                query: store.add(format!("{prefix}.head{h}.query"), xavier_uniform(d_model, d_attn, rng)),
                key: store.add(format!("{prefix}.head{h}.key"), xavier_uniform(d_model, d_attn, rng)),
                value: store.add(format!("{prefix}.head{h}.value"), xavier_uniform(d_model, d_model, rng)),
            })
            .collect::<Vec<_>>();
        let output = store.add(format!("{prefix}.output"), xavier_uniform(heads.len() * d_model, d_model, rng));
        Ok(Self { heads, output, d_model, d_attn })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[NeighborHead] {
        &self.heads
    }

    pub fn output_projection(&self) -> ParamId {
        self.output
    }

    pub fn d_attn(&self) -> usize {
        self.d_attn
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, center: Var, side: Var) -> Result<NeighborAttentionOutput> {
        let (cs, ss) = (ctx.graph.shape(center), ctx.graph.shape(side));
        if cs != ss || cs.1 != self.d_model {
            return Err(Error::Shape(format!(
                "neighbor attention: center {}x{} vs neighbor {}x{} (d_model {})",
                cs.0, cs.1, ss.0, ss.1, self.d_model
            )));
        }
        let scale = 1.0 / (self.d_attn as f64).sqrt();
        let mut mixes = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (wq, wk, wv) = (ctx.p(head.query), ctx.p(head.key), ctx.p(head.value));
            let g = &mut *ctx.graph;
            let q = g.matmul(center, wq)?;
            let k = g.matmul(side, wk)?;
            let v = g.matmul(center, wv)?;
            let scores = g.matmul_nt(q, k)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            mixes.push(g.matmul(attn, v)?);
            weights.push(attn);
        }
        let wo = ctx.p(self.output);
        let concat = if mixes.len() == 1 { mixes[0] } else { ctx.graph.concat_cols(&mixes)? };
        let output = ctx.graph.matmul(concat, wo)?;
        Ok(NeighborAttentionOutput { output, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Graph};
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn setup(d_model: usize, d_attn: usize, heads: usize, seed: u64) -> (ParamStore, NeighborAttention) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let attn = NeighborAttention::new(&mut store, "attn", d_model, d_attn, heads, &mut rng).unwrap();
        (store, attn)
    }

    #[test]
    fn output_projection_shape() {
        let (store, attn) = setup(6, 4, 3, 0);
        assert_eq!(store.get(attn.output_projection()).shape(), (18, 6));
    }

    #[test]
    fn single_position_ignores_keys() {
        let (store, attn) = setup(4, 4, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = Tensor::from_fn(1, 4, |_, _| rng.random_range(-1.0..1.0));
        let run = |side: Tensor| {
            let mut g = Graph::new();
            let params = store.bind(&mut g);
            let mut ctx = Ctx::eval(&mut g, &params);
            let c = ctx.graph.constant(center.clone());
            let s = ctx.graph.constant(side);
            let out = attn.forward(&mut ctx, c, s).unwrap();
            g.value(out.output).clone()
        };
        let a = run(Tensor::full(1, 4, 5.0));
        let b = run(Tensor::full(1, 4, -3.0));
        assert_eq!(a, b);

        // V·W^O with V the per-head value projections concatenated.
        let mut concat = Vec::new();
        for h in attn.heads() {
            concat.push(center.matmul(store.get(h.value)).unwrap());
        }
        let wide = Tensor::from_fn(1, 8, |_, c| concat[c / 4].get(0, c % 4));
        let want = wide.matmul(store.get(attn.output_projection())).unwrap();
        for (x, y) in a.data().iter().zip(want.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let (mut store, attn) = setup(4, 4, 1, 3);
        let q = attn.heads()[0].query;
        store.set(q, Tensor::zeros(4, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let center = Tensor::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let side = Tensor::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let mut ctx = Ctx::eval(&mut g, &params);
        let c = ctx.graph.constant(center.clone());
        let s = ctx.graph.constant(side);
        let out = attn.forward(&mut ctx, c, s).unwrap();
        let w = g.value(out.weights[0]);
        for &p in w.data() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        // Each pre-projection row is the column mean of V.
        let v = center.matmul(store.get(attn.heads()[0].value)).unwrap();
        let mean: Vec<f64> = (0..4).map(|c| v.col_values(c).iter().sum::<f64>() / 3.0).collect();
        let want = Tensor::from_fn(3, 4, |_, c| mean[c]).matmul(store.get(attn.output_projection())).unwrap();
        for (x, y) in g.value(out.output).data().iter().zip(want.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_two_step_head() {
        // Identity projections so Q = center, K = side, V = center.
        let (mut store, attn) = setup(2, 2, 1, 5);
        let head = attn.heads()[0].clone();
        for id in [head.query, head.key, head.value, attn.output_projection()] {
            store.set(id, Tensor::identity(2)).unwrap();
        }
        let q = Tensor::from_rows(&[&[1.0, 0.0], &[0.5, -1.0]]);
        let k = Tensor::from_rows(&[&[0.0, 2.0], &[1.0, 1.0]]);
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let mut ctx = Ctx::eval(&mut g, &params);
        let c = ctx.graph.constant(q.clone());
        let s = ctx.graph.constant(k.clone());
        let out = attn.forward(&mut ctx, c, s).unwrap();

        // scores = QKᵀ/√2: row0 = [0, 1]/√2, row1 = [-2, -0.5]/√2
        let r2 = 2f64.sqrt();
        let soft = |a: f64, b: f64| {
            let (ea, eb) = (a.exp(), b.exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let (a00, a01) = soft(0.0, 1.0 / r2);
        let (a10, a11) = soft(-2.0 / r2, -0.5 / r2);
        let want = [a00 * 1.0 + a01 * 0.5, a00 * 0.0 + -a01, a10 * 1.0 + a11 * 0.5, a10 * 0.0 + -a11];
        for (x, y) in g.value(out.output).data().iter().zip(want) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let (store, attn) = setup(4, 3, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let center = Tensor::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let side = Tensor::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut params = store.values().to_vec();
        params.push(center);
        params.push(side);
        let n = store.len();
        let report = grad_check(
            &params,
            |g, v| {
                let mut ctx = Ctx::eval(g, &v[..n]);
                let out = attn.forward(&mut ctx, v[n], v[n + 1])?;
                let sq = ctx.graph.mul(out.output, out.output)?;
                Ok(ctx.graph.sum(sq))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.entries);
    }
}
