use serde::{Deserialize, Serialize};

use crate::data::table::NormalizationState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Normalized,
    Original,
}

/// Per-target error summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: Vec<f64>,
    pub rmse: Vec<f64>,
    pub units: Units,
    pub count: usize,
}

/// MAE and RMSE of `pred` against `truth`, both `len × |targets|` in
/// normalized units. With [`Units::Original`] both are first mapped back
/// through `state`, column `j` using series column `target_columns[j]`.
pub fn metrics(
    pred: &Tensor,
    truth: &Tensor,
    state: &NormalizationState,
    target_columns: &[usize],
    units: Units,
) -> Result<MetricsReport> {
    if pred.shape() != truth.shape() {
        return Err(Error::Input(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    if target_columns.len() != pred.cols() {
        return Err(Error::Input(format!("{} target columns for {} series", target_columns.len(), pred.cols())));
    }
    if pred.rows() == 0 {
        return Err(Error::Input("no predictions to score".into()));
    }
    let map = |v: f64, j: usize| match units {
        Units::Normalized => v,
        Units::Original => state.denormalize_value(target_columns[j], v),
    };
    let (mut mae, mut rmse) = (Vec::new(), Vec::new());
    for j in 0..pred.cols() {
        let (p, t) = (pred.col_values(j), truth.col_values(j));
        let errors: Vec<f64> = p.iter().zip(&t).map(|(&a, &b)| map(a, j) - map(b, j)).collect();
        mae.push(mean_abs(&errors));
        rmse.push(root_mean_square(&errors));
    }
    Ok(MetricsReport { mae, rmse, units, count: pred.rows() })
}

pub fn mean_abs(errors: &[f64]) -> f64 {
    errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

pub fn root_mean_square(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// One-step persistence: the estimate at `t` is the observation at `t − 1`.
/// Returns estimates for indices `1..len`.
pub fn persistence_baseline(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::Input(format!("persistence needs at least 2 points, got {}", series.len())));
    }
    Ok(series[..series.len() - 1].to_vec())
}
