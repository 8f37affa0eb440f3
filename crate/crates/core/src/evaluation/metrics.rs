use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!("prediction length {} vs target length {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::shape("metrics need at least one value"));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

/// Symmetric absolute percentage error with the half-sum denominator, in
/// `[0, 2]`. Pairs with `|ŷ| + |y| = 0` contribute 0.
pub fn smape(pred_denorm: &[f64], target_denorm: &[f64]) -> Result<f64> {
    check_pair(pred_denorm, target_denorm)?;
    let total: f64 = pred_denorm
        .iter()
        .zip(target_denorm)
        .map(|(p, y)| {
            let denom = (p.abs() + y.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (p - y).abs() / denom
            }
        })
        .sum();
    Ok(total / pred_denorm.len() as f64)
}

/// Series the seasonal-naive scale of MASE is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaseScale {
    /// The target window itself.
    #[default]
    Target,
    /// The history window preceding the forecast.
    History,
}

/// Mean absolute error scaled by the mean absolute lag-`m` difference of
/// `scale_series`. `None` when the scale is zero or `scale_series` is not
/// longer than `m`.
pub fn mase(pred: &[f64], target: &[f64], scale_series: &[f64], m: usize) -> Result<Option<f64>> {
    check_pair(pred, target)?;
    if m == 0 {
        return Err(Error::config("MASE period must be >= 1"));
    }
    if scale_series.len() <= m {
        return Ok(None);
    }
    let scale = scale_series.windows(m + 1).map(|w| (w[m] - w[0]).abs()).sum::<f64>() / (scale_series.len() - m) as f64;
    if scale == 0.0 || !scale.is_finite() {
        return Ok(None);
    }
    Ok(Some(mae(pred, target)? / scale))
}
