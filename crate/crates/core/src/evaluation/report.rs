use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mae, mase, mse, smape, MaseScale};
use crate::data::{PreparedDataset, Region};
use crate::error::{Error, Result};
use crate::finetune::{forecast_rows, predict_windows, ForecastRow};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mase_scale: MaseScale,
    /// Seasonal period of the naive forecast behind MASE.
    pub mase_period: usize,
    /// Use every `test_stride`-th test window.
    pub test_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mase_scale: MaseScale::Target, mase_period: 1, test_stride: 1 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mase_period == 0 || self.test_stride == 0 {
            return Err(Error::config("evaluation.mase_period and evaluation.test_stride must be >= 1"));
        }
        Ok(())
    }
}

/// Per-customer metrics averaged over that customer's test windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub customer_id: String,
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    /// Mean over windows where MASE is defined.
    pub mase: Option<f64>,
    pub windows: usize,
    pub mase_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub horizon: Option<usize>,
    pub customers: usize,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    pub mase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub per_horizon: Vec<Aggregate>,
    pub overall: Aggregate,
    /// `(customer_id, horizon)` pairs without a test window.
    pub excluded: Vec<(String, usize)>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn aggregate(rows: &[&MetricRow], horizon: Option<usize>) -> Aggregate {
    Aggregate {
        horizon,
        customers: rows.len(),
        mse: mean(rows.iter().map(|r| r.mse)).unwrap_or(f64::NAN),
        mae: mean(rows.iter().map(|r| r.mae)).unwrap_or(f64::NAN),
        smape: mean(rows.iter().map(|r| r.smape)).unwrap_or(f64::NAN),
        mase: mean(rows.iter().filter_map(|r| r.mase)),
    }
}

impl MetricReport {
    /// Cross-customer means per horizon and over all rows.
    pub fn from_rows(rows: Vec<MetricRow>, excluded: Vec<(String, usize)>) -> Self {
        let mut by_h: BTreeMap<usize, Vec<&MetricRow>> = BTreeMap::new();
        for r in &rows {
            by_h.entry(r.horizon).or_default().push(r);
        }
        let per_horizon = by_h.iter().map(|(h, rs)| aggregate(rs, Some(*h))).collect();
        let all: Vec<&MetricRow> = rows.iter().collect();
        let overall = aggregate(&all, None);
        Self { rows, per_horizon, overall, excluded }
    }

    pub fn horizon(&self, h: usize) -> Option<&Aggregate> {
        self.per_horizon.iter().find(|a| a.horizon == Some(h))
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.per_horizon.iter().filter_map(|a| a.horizon).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    /// Summary without the per-customer rows.
    pub fn write_json_summary(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            customers: usize,
            per_horizon: &'a [Aggregate],
            overall: &'a Aggregate,
            excluded: &'a [(String, usize)],
        }
        let customers = self.rows.iter().map(|r| r.customer_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
        let s = Summary { customers, per_horizon: &self.per_horizon, overall: &self.overall, excluded: &self.excluded };
        std::fs::write(path, serde_json::to_string_pretty(&s)?)?;
        Ok(())
    }
}

/// Metrics and forecast rows of one customer at one horizon.
struct CustomerEval {
    row: Option<MetricRow>,
    forecasts: Vec<ForecastRow>,
}

fn evaluate_customer(
    model: &Model,
    data: &PreparedDataset,
    ci: usize,
    horizon: usize,
    cfg: &EvalConfig,
    keep_forecasts: bool,
) -> Result<CustomerEval> {
    let c = &data.customers[ci];
    let spec = data.spec.with_horizon(horizon);
    let windows: Vec<_> = c.windows(Region::Test, &spec).into_iter().step_by(cfg.test_stride).collect();
    if windows.is_empty() {
        return Ok(CustomerEval { row: None, forecasts: Vec::new() });
    }
    let results = predict_windows(model, c, &windows, horizon)?;
    let (mut s_mse, mut s_mae, mut s_smape, mut s_mase) = (0.0, 0.0, 0.0, 0.0);
    let (mut n_mase, mut undefined) = (0usize, 0usize);
    let mut forecasts = Vec::new();
    for (w, r) in windows.iter().zip(&results) {
        let target = c.target(w);
        s_mse += mse(&r.predictions, target)?;
        s_mae += mae(&r.predictions, target)?;
        s_smape += smape(&r.predictions_denorm, &c.stats.denormalize_all(target))?;
        let scale = match cfg.mase_scale {
            MaseScale::Target => target,
            MaseScale::History => c.history(w),
        };
        match mase(&r.predictions, target, scale, cfg.mase_period)? {
            Some(v) => {
                s_mase += v;
                n_mase += 1;
            }
            None => undefined += 1,
        }
        if keep_forecasts {
            forecasts.extend(forecast_rows(r, c, w));
        }
    }
    let n = windows.len() as f64;
    Ok(CustomerEval {
        row: Some(MetricRow {
            customer_id: c.customer_id.clone(),
            horizon,
            mse: s_mse / n,
            mae: s_mae / n,
            smape: s_smape / n,
            mase: (n_mase > 0).then(|| s_mase / n_mase as f64),
            windows: windows.len(),
            mase_undefined: undefined,
        }),
        forecasts,
    })
}

/// Evaluates every customer's test windows at each horizon. Customers are
/// processed in parallel and reduced in dataset order.
pub fn evaluate_model(model: &Model, data: &PreparedDataset, horizons: &[usize], cfg: &EvalConfig) -> Result<MetricReport> {
    Ok(evaluate_with_forecasts(model, data, horizons, cfg, false)?.0)
}

/// As [`evaluate_model`], also returning every forecast row when
/// `keep_forecasts` is set.
pub fn evaluate_with_forecasts(
    model: &Model,
    data: &PreparedDataset,
    horizons: &[usize],
    cfg: &EvalConfig,
    keep_forecasts: bool,
) -> Result<(MetricReport, Vec<ForecastRow>)> {
    cfg.validate()?;
    if let Some(h) = horizons.iter().find(|&&h| !model.has_forecast_head(h)) {
        return Err(Error::config(format!("model has no forecast head for horizon {h}")));
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut forecasts = Vec::new();
    for &h in horizons {
        let evals: Vec<Result<CustomerEval>> = (0..data.customers.len())
            .into_par_iter()
            .map(|ci| evaluate_customer(model, data, ci, h, cfg, keep_forecasts))
            .collect();
        for (ci, e) in evals.into_iter().enumerate() {
            let e = e?;
            match e.row {
                Some(r) => rows.push(r),
                None => excluded.push((data.customers[ci].customer_id.clone(), h)),
            }
            forecasts.extend(e.forecasts);
        }
    }
    Ok((MetricReport::from_rows(rows, excluded), forecasts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub customer_id: String,
    pub metric: String,
    pub value_ours: Option<f64>,
    pub value_baseline: Option<f64>,
}

/// Per-customer pairs of model-vs-baseline metrics at one horizon.
pub fn scatter_rows(ours: &MetricReport, baseline: &MetricReport, horizon: usize) -> Vec<ScatterRow> {
    let base: BTreeMap<&str, &MetricRow> = baseline
        .rows
        .iter()
        .filter(|r| r.horizon == horizon)
        .map(|r| (r.customer_id.as_str(), r))
        .collect();
    let mut out = Vec::new();
    for r in ours.rows.iter().filter(|r| r.horizon == horizon) {
        let b = base.get(r.customer_id.as_str());
        let metrics: [(&str, Option<f64>, Option<f64>); 4] = [
            ("mse", Some(r.mse), b.map(|b| b.mse)),
            ("mae", Some(r.mae), b.map(|b| b.mae)),
            ("smape", Some(r.smape), b.map(|b| b.smape)),
            ("mase", r.mase, b.and_then(|b| b.mase)),
        ];
        for (m, o, bv) in metrics {
            out.push(ScatterRow { customer_id: r.customer_id.clone(), metric: m.into(), value_ours: o, value_baseline: bv });
        }
    }
    out
}

pub fn write_scatter_csv(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
