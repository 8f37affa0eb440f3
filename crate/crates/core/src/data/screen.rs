use serde::{Deserialize, Serialize};

use super::series::CustomerSeries;
use crate::error::{Error, Result};

/// Minimum series length retained by [`filter_short_series`].
pub const DEFAULT_MIN_LEN: usize = 300;

/// Thresholds for Z-score based series screening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub z_threshold: f64,
    pub max_fraction: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self { z_threshold: 8.0, max_fraction: 0.01 }
    }
}

/// Keeps series with at least `min_len` points, preserving order.
pub fn filter_short_series(series: Vec<CustomerSeries>, min_len: usize) -> Vec<CustomerSeries> {
    series.into_iter().filter(|s| s.len() >= min_len).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenDecision {
    pub keep: bool,
    /// Z value per time step; unobserved steps and the degenerate σ = 0 case yield 0.
    pub z: Vec<f64>,
    pub outlier_fraction: f64,
}

/// Z-score screening over observed points using the series' own mean and
/// (population) standard deviation. A series is dropped only when the share of
/// points with |Z| above the threshold exceeds `max_fraction`; the values
/// themselves are never modified.
pub fn zscore_screen(series: &CustomerSeries, cfg: &ScreenConfig) -> Result<ScreenDecision> {
    check_finite(series)?;
    let observed: Vec<f64> = series.observed_values().collect();
    let n = observed.len();
    if n < 2 {
        return Ok(ScreenDecision { keep: true, z: vec![0.0; series.len()], outlier_fraction: 0.0 });
    }
    let mean = observed.iter().sum::<f64>() / n as f64;
    let var = observed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    zscore_with_reference(series, mean, var.sqrt(), cfg)
}

/// Same decision rule as [`zscore_screen`] against externally supplied
/// reference statistics (e.g. pooled over a dataset).
pub fn zscore_with_reference(
    series: &CustomerSeries,
    mean: f64,
    std: f64,
    cfg: &ScreenConfig,
) -> Result<ScreenDecision> {
    check_finite(series)?;
    let n = series.observed_count();
    if std == 0.0 || n == 0 {
        return Ok(ScreenDecision { keep: true, z: vec![0.0; series.len()], outlier_fraction: 0.0 });
    }
    let z: Vec<f64> = series
        .values
        .iter()
        .zip(&series.observed_mask)
        .map(|(&x, &m)| if m { (x - mean) / std } else { 0.0 })
        .collect();
    let outliers = z
        .iter()
        .zip(&series.observed_mask)
        .filter(|(zi, &m)| m && zi.abs() > cfg.z_threshold)
        .count();
    let outlier_fraction = outliers as f64 / n as f64;
    Ok(ScreenDecision { keep: outlier_fraction <= cfg.max_fraction, z, outlier_fraction })
}

fn check_finite(series: &CustomerSeries) -> Result<()> {
    if series.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!(
            "series {} contains non-finite values",
            series.customer_id
        )));
    }
    Ok(())
}

/// Applies [`zscore_screen`] to every series and keeps the survivors.
pub fn screen_dataset(series: Vec<CustomerSeries>, cfg: &ScreenConfig) -> Result<Vec<CustomerSeries>> {
    let mut kept = Vec::with_capacity(series.len());
    for s in series {
        let decision = zscore_screen(&s, cfg)?;
        if decision.keep {
            kept.push(s);
        } else {
            log::info!(
                "dropping {}: {:.2}% of points beyond |Z| > {}",
                s.customer_id,
                100.0 * decision.outlier_fraction,
                cfg.z_threshold
            );
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn series(values: Vec<f64>) -> CustomerSeries {
        CustomerSeries::from_values("c", NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), values)
    }

    #[test]
    fn short_series_boundary() {
        let kept = filter_short_series(
            vec![series(vec![1.0; 299]), series(vec![1.0; 300]), series(vec![1.0; 301])],
            DEFAULT_MIN_LEN,
        );
        assert_eq!(kept.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![300, 301]);
        assert!(filter_short_series(vec![], DEFAULT_MIN_LEN).is_empty());
    }

    #[test]
    fn zscore_value() {
        let s = series(vec![10.0, -2.0, 2.0]);
        let d = zscore_with_reference(&s, 0.0, 2.0, &ScreenConfig::default()).unwrap();
        assert_eq!(d.z, vec![5.0, -1.0, 1.0]);
        // population stats of [-2, 2, -2, 2] are mean 0, std 2
        let d = zscore_screen(&series(vec![-2.0, 2.0, -2.0, 2.0]), &ScreenConfig::default()).unwrap();
        assert_eq!(d.z, vec![-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn constant_series_kept_with_zero_z() {
        let d = zscore_screen(&series(vec![4.0; 50]), &ScreenConfig::default()).unwrap();
        assert!(d.keep);
        assert!(d.z.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn ten_percent_at_z9_dropped() {
        // 100 points, reference mean 0 / std 1; every 10th point sits at 9.
        let v: Vec<f64> = (0..100).map(|i| if i % 10 == 0 { 9.0 } else { 0.5 }).collect();
        let s = series(v);
        let cfg = ScreenConfig { z_threshold: 8.0, max_fraction: 0.05 };
        let d = zscore_with_reference(&s, 0.0, 1.0, &cfg).unwrap();
        let brute = d.z.iter().filter(|z| z.abs() > 8.0).count();
        assert_eq!(brute, 10);
        assert!((d.outlier_fraction - 0.1).abs() < 1e-15);
        assert!(!d.keep);
    }

    #[test]
    fn sparse_spikes_dropped_by_own_stats() {
        let mut v: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.001 } else { -0.001 }).collect();
        for i in 0..5 {
            v[i * 200] = 1000.0;
        }
        let s = series(v);
        let d = zscore_screen(&s, &ScreenConfig { z_threshold: 8.0, max_fraction: 0.001 }).unwrap();
        assert_eq!(d.z.iter().filter(|z| z.abs() > 8.0).count(), 5);
        assert!(!d.keep);
        assert!(zscore_screen(&s, &ScreenConfig::default()).unwrap().keep);
    }

    #[test]
    fn non_finite_is_error() {
        assert!(zscore_screen(&series(vec![1.0, f64::NAN]), &ScreenConfig::default()).is_err());
    }

    #[test]
    fn screening_is_idempotent() {
        let mut bad = series(vec![0.0; 400]);
        // 5 of 400 points (1.25%) at |Z| ≈ 8.9
        for i in 0..5 {
            bad.values[i * 80] = 1e6;
        }
        let good = series((0..400).map(|i| (i as f64).sin()).collect());
        let cfg = ScreenConfig::default();
        let once = screen_dataset(vec![bad, good], &cfg).unwrap();
        assert_eq!(once.len(), 1);
        let twice = screen_dataset(once.clone(), &cfg).unwrap();
        assert_eq!(once, twice);
    }
}
