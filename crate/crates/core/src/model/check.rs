use crate::autodiff::{grad_check, OpKind};
use crate::error::Result;
use crate::model::{Forecaster, ModelConfig};
use crate::params::Ctx;
use crate::tensor::Tensor;

/// Worst relative gradient error of one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradError {
    pub name: String,
    pub group: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradReport {
    pub params: Vec<ParamGradError>,
    pub tolerance: f64,
}

impl ModelGradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    /// `(group, worst error)` in parameter order.
    pub fn groups(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for p in &self.params {
            match out.iter_mut().find(|(g, _)| *g == p.group) {
                Some((_, e)) => *e = e.max(p.max_rel_error),
                None => out.push((p.group.clone(), p.max_rel_error)),
            }
        }
        out
    }

    pub fn failing_groups(&self) -> Vec<String> {
        self.groups().into_iter().filter(|(_, e)| *e >= self.tolerance).map(|(g, _)| g).collect()
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every layer: `d_model`
    /// 8, window 6, one head, dropout off.
    pub fn micro(d_input: usize, target_columns: Vec<usize>) -> Self {
        Self { d_model: 8, window: 6, heads: 1, dropout: 0.0, ..Self::new(d_input, target_columns) }
    }
}

/// Checks the analytic gradient of the eval-mode MSE between the model's
/// output on `window` and `target` against central differences, for every
/// parameter entry. `corrupt` perturbs one operation family's backward rule
/// as a negative control.
pub fn check_model_gradients(
    model: &Forecaster,
    window: &Tensor,
    target: &Tensor,
    h: f64,
    tolerance: f64,
    corrupt: Option<OpKind>,
) -> Result<ModelGradReport> {
    let report = grad_check(
        model.params().values(),
        |g, vars| {
            if let Some(kind) = corrupt {
                g.corrupt_backward(kind);
            }
            let mut ctx = Ctx::eval(g, vars);
            let out = model.forward(&mut ctx, window)?;
            let t = ctx.graph.constant(target.clone());
            ctx.graph.mse(out, t)
        },
        h,
        tolerance,
    )?;
    let names = model.params().names();
    let params = report
        .entries
        .iter()
        .map(|e| ParamGradError {
            name: names[e.param].clone(),
            group: Forecaster::param_group(&names[e.param]),
            max_rel_error: e.max_rel_error,
        })
        .collect();
    Ok(ModelGradReport { params, tolerance })
}
