use serde::{Deserialize, Serialize};

use super::series::CustomerSeries;
use super::split::{make_splits, SplitSpec};
use crate::error::Result;

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-customer standardization parameters, fitted on the training region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub customer_id: String,
    pub mean: f64,
    pub std: f64,
}

impl NormalizationStats {
    /// Fits mean and population std on `values`, flooring the std.
    pub fn fit(customer_id: impl Into<String>, values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { customer_id: customer_id.into(), mean, std: var.sqrt().max(STD_FLOOR) }
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn normalize_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.normalize(x)).collect()
    }

    pub fn denormalize_all(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().map(|&z| self.denormalize(z)).collect()
    }
}

/// Standardizes a series with statistics fitted on its training region only.
pub fn normalize_series(series: &CustomerSeries, spec: &SplitSpec) -> Result<(CustomerSeries, NormalizationStats)> {
    let regions = make_splits(series.len(), spec)?;
    let stats = NormalizationStats::fit(series.customer_id.clone(), &series.values[regions.train.clone()]);
    let mut out = series.clone();
    out.values = stats.normalize_all(&series.values);
    Ok((out, stats))
}

/// [`normalize_series`] over a dataset.
pub fn normalize_dataset(
    series: &[CustomerSeries],
    spec: &SplitSpec,
) -> Result<(Vec<CustomerSeries>, Vec<NormalizationStats>)> {
    use rayon::prelude::*;
    let pairs: Result<Vec<_>> = series.par_iter().map(|s| normalize_series(s, spec)).collect();
    Ok(pairs?.into_iter().unzip())
}
