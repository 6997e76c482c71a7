//! Sliding fusion: a per-time-step weighted merge of `k` stacked feature
//! matrices, gated by a sigmoid carry of the previous step's weighted result.
//!
//! For each time `t`, the rows of the stacked matrices at `t` form a
//! `k × d` block `c(t)`. The weighted vector is `w(t) = c(t)ᵀ W`, the carry
//! is `s(t−1) = σ(w(t−1))` with `s(0) = 1`, and the fused row is
//! `f(t) = w(t) ⊙ s(t−1)`. Row `t` of the output depends on times `≤ t` only.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SlidingFusion {
    stack_height: usize,
    weights: ParamId,
    /// `Some(n)` when every time step owns its weight vector.
    steps: Option<usize>,
}

pub struct FusionOutput {
    /// Fused rows, `n × d`.
    pub fused: Var,
    /// Time-ordered blocks `c(1..n)`, `(k·n) × d`.
    pub blocks: Var,
}

impl SlidingFusion {
    /// Weights start at `1/k`, an even average of the stacked matrices.
    pub fn new(store: &mut ParamStore, prefix: &str, stack_height: usize, per_timestep: Option<usize>) -> Result<Self> {
        if stack_height == 0 {
            return Err(Error::Config("sliding fusion needs at least one stacked matrix".into()));
        }
        let cols = per_timestep.unwrap_or(1);
        if cols == 0 {
            return Err(Error::Config("per-timestep fusion needs n >= 1".into()));
        }
        let init = Tensor::full(stack_height, cols, 1.0 / stack_height as f64);
        let weights = store.add(format!("{prefix}.weights"), init);
        Ok(Self { stack_height, weights, steps: per_timestep })
    }

    pub fn stack_height(&self) -> usize {
        self.stack_height
    }

    pub fn weights(&self) -> ParamId {
        self.weights
    }

    pub fn per_timestep(&self) -> bool {
        self.steps.is_some()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, stack: &[Var]) -> Result<FusionOutput> {
        if stack.len() != self.stack_height {
            return Err(Error::Shape(format!(
                "sliding fusion expects {} stacked matrices, got {}",
                self.stack_height,
                stack.len()
            )));
        }
        let (n, d) = ctx.graph.shape(stack[0]);
        if let Some(steps) = self.steps {
            if steps != n {
                return Err(Error::Shape(format!("per-timestep fusion built for {steps} steps, got {n}")));
            }
        }
        let w = ctx.p(self.weights);
        let g = &mut *ctx.graph;
        let blocks = g.interleave_rows(stack)?;
        let weighted = g.block_weighted_sum(blocks, w)?;
        let fused = if n == 1 {
            weighted
        } else {
            let previous = g.slice_rows(weighted, 0, n - 1)?;
            let gates = g.sigmoid(previous);
            let first = g.constant(Tensor::ones(1, d));
            let carry = g.concat_rows(&[first, gates])?;
            g.mul(weighted, carry)?
        };
        Ok(FusionOutput { fused, blocks })
    }
}
