//! Augmented Dickey–Fuller statistic with a constant term and a fixed lag order.
//!
//! Regression for t = p+1 .. T-1:
//!
//! ```text
//! Δy_t = γ·y_{t-1} + Σ_{i=1..p} δ_i·Δy_{t-i} + c + ε_t
//! ```
//!
//! The returned statistic is the OLS t-value of γ.

use nalgebra::{DMatrix, DVector};

use super::series::CustomerSeries;

/// Schwert's rule `floor(12·(T/100)^{1/4})`.
pub fn schwert_lag(len: usize) -> usize {
    (12.0 * (len as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Smallest length for which the regression with the Schwert lag keeps at
/// least one residual degree of freedom.
pub fn min_adf_len(len: usize) -> bool {
    let p = schwert_lag(len);
    // nobs = T - p - 1 regressors = p + 2
    len > 2 * p + 3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags: usize,
    pub nobs: usize,
}

/// ADF t-statistic with `lags` lagged differences. Returns `None` when the
/// series is too short or the design matrix is singular.
pub fn adf_statistic(y: &[f64], lags: usize) -> Option<AdfResult> {
    let t_len = y.len();
    if t_len < lags + 2 {
        return None;
    }
    let nobs = t_len - lags - 1;
    let k = lags + 2;
    if nobs <= k {
        return None;
    }
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // dy[j] = y[j+1] - y[j]; row r uses target dy[lags + r].
    let mut x = DMatrix::<f64>::zeros(nobs, k);
    let mut target = DVector::<f64>::zeros(nobs);
    for r in 0..nobs {
        let j = lags + r;
        target[r] = dy[j];
        x[(r, 0)] = y[j];
        for i in 1..=lags {
            x[(r, i)] = dy[j - i];
        }
        x[(r, k - 1)] = 1.0;
    }
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.try_inverse()?;
    let beta = &xtx_inv * (x.transpose() * &target);
    let resid = &target - &x * &beta;
    let sigma2 = resid.dot(&resid) / (nobs - k) as f64;
    let se = (sigma2 * xtx_inv[(0, 0)]).sqrt();
    if !se.is_finite() || se == 0.0 {
        return None;
    }
    Some(AdfResult { statistic: beta[0] / se, lags, nobs })
}

/// ADF statistic of one customer's (imputed) series with the Schwert lag.
pub fn series_adf(values: &[f64]) -> Option<AdfResult> {
    if !min_adf_len(values.len()) {
        return None;
    }
    adf_statistic(values, schwert_lag(values.len()))
}

/// Length-weighted mean ADF statistic `Σ T_i·ADF_i / Σ T_i`.
///
/// Series too short for the regression are skipped with a warning. Returns
/// `None` if nothing could be evaluated.
pub fn weighted_adf(dataset: &[CustomerSeries]) -> Option<f64> {
    use rayon::prelude::*;
    let stats: Vec<Option<(f64, f64)>> = dataset
        .par_iter()
        .map(|s| series_adf(&s.values).map(|r| (s.len() as f64, r.statistic)))
        .collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, st) in dataset.iter().zip(stats) {
        match st {
            Some((w, adf)) => {
                num += w * adf;
                den += w;
            }
            None => log::warn!("ADF skipped for {} (length {})", s.customer_id, s.len()),
        }
    }
    (den > 0.0).then(|| num / den)
}
