//! Central finite-difference verification of analytic gradients.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.max_rel_error >= self.tolerance)
    }
}

/// `|a − n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(params: &[Tensor], f: &F) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if g.shape(loss) != (1, 1) {
        return Err(Error::Shape("grad_check function must return a 1x1 value".into()));
    }
    Ok((g, vars, loss))
}

/// Compares the analytic gradient of the scalar `f(params)` against the
/// central difference `(f(θ+h) − f(θ−h)) / 2h` for every entry of every
/// parameter. `f` must be deterministic.
pub fn grad_check<F>(params: &[Tensor], f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, loss) = evaluate(params, &f)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();
    drop(g);

    let mut work = params.to_vec();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut entry = GradCheckEntry { param: pi, max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for idx in 0..work[pi].len() {
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + h;
            let (gp, _, lp) = evaluate(&work, &f)?;
            let plus = gp.value(lp).get(0, 0);
            work[pi].data_mut()[idx] = orig - h;
            let (gm, _, lm) = evaluate(&work, &f)?;
            let minus = gm.value(lm).get(0, 0);
            work[pi].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[idx];
            let err = relative_error(a, numeric);
            if err > entry.max_rel_error || !err.is_finite() {
                entry = GradCheckEntry {
                    param: pi,
                    max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                    worst_index: idx,
                    analytic: a,
                    numeric,
                };
            }
        }
        entries.push(entry);
    }
    Ok(GradCheckReport { entries, tolerance: tol })
}
