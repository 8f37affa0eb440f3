use super::series::CustomerSeries;
use crate::error::{Error, Result};

/// Fills unobserved days of a series.
///
/// Implementations receive the raw values and the observed mask and return a
/// full-length sequence. External models plug in here.
pub trait ImputationAdapter: Send + Sync {
    fn name(&self) -> &str;

    fn fill(&self, values: &[f64], observed: &[bool]) -> std::result::Result<Vec<f64>, String>;
}

/// Linear interpolation between observed neighbours; leading and trailing gaps
/// take the nearest observed value.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearInterpolation;

impl ImputationAdapter for LinearInterpolation {
    fn name(&self) -> &str {
        "linear"
    }

    fn fill(&self, values: &[f64], observed: &[bool]) -> std::result::Result<Vec<f64>, String> {
        let known: Vec<usize> = (0..values.len()).filter(|&i| observed[i]).collect();
        let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
            return Err("no observed values".into());
        };
        let mut out = values.to_vec();
        out[..first].fill(values[first]);
        out[last + 1..].fill(values[last]);
        for pair in known.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (values[a], values[b]);
            let span = (b - a) as f64;
            for (k, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
                let w = (k - a) as f64 / span;
                *slot = va + (vb - va) * w;
            }
        }
        Ok(out)
    }
}

/// Returns a fully observed copy of `series`. Observed values are carried over
/// bit-for-bit regardless of what the adapter returns for them.
pub fn impute(series: &CustomerSeries, adapter: &dyn ImputationAdapter) -> Result<CustomerSeries> {
    if series.observed_count() == 0 {
        return Err(Error::Imputation {
            adapter: adapter.name().to_string(),
            reason: format!("series {} has no observed values", series.customer_id),
        });
    }
    if series.is_fully_observed() {
        return Ok(series.clone());
    }
    let filled = adapter
        .fill(&series.values, &series.observed_mask)
        .map_err(|reason| Error::Imputation { adapter: adapter.name().to_string(), reason })?;
    if filled.len() != series.len() {
        return Err(Error::Imputation {
            adapter: adapter.name().to_string(),
            reason: format!("returned {} values for a series of length {}", filled.len(), series.len()),
        });
    }
    let mut out = series.clone();
    for (i, v) in filled.into_iter().enumerate() {
        if !series.observed_mask[i] {
            if !v.is_finite() {
                return Err(Error::Imputation {
                    adapter: adapter.name().to_string(),
                    reason: format!("non-finite value at index {i}"),
                });
            }
            out.values[i] = v;
        }
    }
    out.observed_mask.fill(true);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn partial(values: Vec<f64>, mask: Vec<bool>) -> CustomerSeries {
        let mut s = CustomerSeries::from_values("c", NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(), values);
        s.observed_mask = mask;
        s
    }

    #[test]
    fn interior_gap_is_linear() {
        let out = impute(&partial(vec![1.0, 0.0, 3.0], vec![true, false, true]), &LinearInterpolation).unwrap();
        assert_eq!(out.values, vec![1.0, 2.0, 3.0]);
        assert!(out.is_fully_observed());
    }

    #[test]
    fn leading_gap_takes_nearest() {
        let out = impute(&partial(vec![0.0, 2.0, 4.0], vec![false, true, true]), &LinearInterpolation).unwrap();
        assert_eq!(out.values, vec![2.0, 2.0, 4.0]);
    }

    #[test]
    fn trailing_gap_takes_nearest() {
        let out =
            impute(&partial(vec![1.0, 5.0, 0.0, 0.0], vec![true, true, false, false]), &LinearInterpolation).unwrap();
        assert_eq!(out.values, vec![1.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn fully_observed_unchanged() {
        let s = partial(vec![0.1, 0.2, 0.3], vec![true; 3]);
        assert_eq!(impute(&s, &LinearInterpolation).unwrap(), s);
    }

    #[test]
    fn all_missing_is_error() {
        let err = impute(&partial(vec![0.0; 3], vec![false; 3]), &LinearInterpolation).unwrap_err();
        assert!(err.to_string().contains("linear"));
    }

    struct Broken;
    impl ImputationAdapter for Broken {
        fn name(&self) -> &str {
            "saits"
        }
        fn fill(&self, values: &[f64], _: &[bool]) -> std::result::Result<Vec<f64>, String> {
            // also tries to overwrite observed values
            Ok(vec![-1.0; values.len()])
        }
    }

    struct Failing;
    impl ImputationAdapter for Failing {
        fn name(&self) -> &str {
            "remote-model"
        }
        fn fill(&self, _: &[f64], _: &[bool]) -> std::result::Result<Vec<f64>, String> {
            Err("timeout".into())
        }
    }

    #[test]
    fn observed_values_preserved_against_adapter() {
        let s = partial(vec![0.3, 0.0, 0.7], vec![true, false, true]);
        let out = impute(&s, &Broken).unwrap();
        assert_eq!(out.values[0].to_bits(), 0.3f64.to_bits());
        assert_eq!(out.values[2].to_bits(), 0.7f64.to_bits());
        assert_eq!(out.values[1], -1.0);
    }

    #[test]
    fn adapter_failure_names_adapter() {
        let s = partial(vec![0.3, 0.0], vec![true, false]);
        let msg = impute(&s, &Failing).unwrap_err().to_string();
        assert!(msg.contains("remote-model") && msg.contains("timeout"));
    }
}
