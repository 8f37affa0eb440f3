//! Supervised forecasting on top of a (pre)trained encoder.

use std::collections::BTreeSet;
use std::path::Path;

use candle_core::Tensor;
use candle_nn::Optimizer;
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PreparedCustomer, PreparedDataset, ProvenanceGuard, Region, Window};
use crate::error::{Error, Result};
use crate::model::checkpoint::LineageEntry;
use crate::model::{Mode, Model};
use crate::optim::{adam, cosine_lr};

/// Forecast horizons a head may be trained for.
pub const HORIZONS: [usize; 8] = [7, 15, 30, 60, 90, 120, 150, 180];

const HEAD_PREFIX: &str = "forecast.";
const EVAL_CHUNK: usize = 256;

/// How the weighted squared errors of one sample are reduced over the horizon.
/// Samples are always averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub horizon: usize,
    /// An epoch is `steps_per_epoch` mini-batches drawn uniformly from all
    /// training windows, followed by one validation pass.
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub freeze_encoder: bool,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Upper bound on validation windows, subsampled at even spacing.
    pub max_val_windows: usize,
    pub reduction: HorizonReduction,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            epochs: 10,
            steps_per_epoch: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            freeze_encoder: false,
            seed: 0,
            patience: 5,
            max_val_windows: 512,
            reduction: HorizonReduction::Mean,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !HORIZONS.contains(&self.horizon) {
            problems.push(format!("finetune.horizon {} not in {HORIZONS:?}", self.horizon));
        }
        if self.batch_size == 0 {
            problems.push("finetune.batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0) {
            problems.push(format!("finetune.learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if self.max_val_windows == 0 {
            problems.push("finetune.max_val_windows must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

/// `l^(−1/2)` for `l = 1..=horizon`.
pub fn signal_decay_weights(horizon: usize) -> Vec<f64> {
    (1..=horizon).map(|l| 1.0 / (l as f64).sqrt()).collect()
}

/// Squared errors weighted per horizon step, reduced over the horizon and
/// averaged over samples. `pred` and `target` are `(B, H)`.
pub fn weighted_squared_loss(pred: &Tensor, target: &Tensor, weights: &[f64], reduction: HorizonReduction) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    let (_, h) = pred.dims2()?;
    if h == 0 || weights.len() != h {
        return Err(Error::shape(format!("{} weights for horizon {h}", weights.len())));
    }
    let w = Tensor::from_slice(weights, (1, h), pred.device())?;
    let per_sample = (pred - target)?.sqr()?.broadcast_mul(&w)?.sum(1)?;
    let per_sample = match reduction {
        HorizonReduction::Mean => (per_sample / h as f64)?,
        HorizonReduction::Sum => per_sample,
    };
    Ok(per_sample.mean_all()?)
}

/// Forecast loss emphasizing near-term steps by `l^(−1/2)`.
pub fn signal_decay_loss(pred: &Tensor, target: &Tensor, reduction: HorizonReduction) -> Result<Tensor> {
    let (_, h) = pred.dims2()?;
    weighted_squared_loss(pred, target, &signal_decay_weights(h), reduction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub curve: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when nothing was trained or no
    /// validation window exists (the last parameters are kept).
    pub best_epoch: Option<usize>,
    pub lineage: LineageEntry,
}

/// `(customer index, window)` pairs of one region.
fn window_pool(data: &PreparedDataset, region: Region, horizon: usize) -> Vec<(usize, Window)> {
    let spec = data.spec.with_horizon(horizon);
    data.customers
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.windows(region, &spec).into_iter().map(move |w| (ci, w)))
        .collect()
}

fn evenly_spaced<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|k| items[k * items.len() / max].clone()).collect()
}

fn stack_rows(model: &Model, rows: &[&[f64]]) -> Result<Tensor> {
    let h = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (rows.len(), h), model.device())?)
}

/// Mean squared error over the given windows in evaluation mode.
pub fn windows_mse(model: &Model, data: &PreparedDataset, windows: &[(usize, Window)], horizon: usize) -> Result<Option<f64>> {
    if windows.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(EVAL_CHUNK) {
        let hist: Vec<&[f64]> = chunk.iter().map(|(c, w)| data.customers[*c].history(w)).collect();
        let tgt: Vec<&[f64]> = chunk.iter().map(|(c, w)| data.customers[*c].target(w)).collect();
        let pred = model.forecast(&model.windows_tensor(&hist)?, horizon, &mut Mode::Eval)?;
        let err = (pred - stack_rows(model, &tgt)?)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        total += err;
    }
    Ok(Some(total / (windows.len() * horizon) as f64))
}

/// Fine-tunes `model` in place for `cfg.horizon` on the training windows of
/// `data`, keeping the parameters with the best validation MSE.
///
/// The forecast head is re-initialized first. With `freeze_encoder` only the
/// head is updated.
pub fn finetune(
    model: &mut Model,
    data: &PreparedDataset,
    cfg: &FinetuneConfig,
    guard: &mut ProvenanceGuard,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if model.patch.window_len != data.spec.history_len {
        return Err(Error::IncompatibleCheckpoint {
            field: "window_len".into(),
            found: model.patch.window_len.to_string(),
            expected: data.spec.history_len.to_string(),
        });
    }
    if cfg.horizon > model.cfg.max_horizon {
        return Err(Error::IncompatibleCheckpoint {
            field: "max_horizon".into(),
            found: model.cfg.max_horizon.to_string(),
            expected: format!(">= {}", cfg.horizon),
        });
    }
    model.init_forecast_head(cfg.horizon, cfg.seed)?;

    let train = window_pool(data, Region::Train, cfg.horizon);
    let val = evenly_spaced(&window_pool(data, Region::Val, cfg.horizon), cfg.max_val_windows);
    let total_steps = cfg.epochs * cfg.steps_per_epoch;
    if total_steps > 0 && train.is_empty() {
        return Err(Error::data(format!("no training windows for horizon {}", cfg.horizon)));
    }
    let trainable: Vec<&str> = if cfg.freeze_encoder { vec![HEAD_PREFIX] } else { vec![HEAD_PREFIX, "patch.", "encoder."] };
    let mut opt = adam(model.params.vars_with_prefix(&trainable), cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, crate::model::Snapshot)> = None;
    let mut since_best = 0;
    let mut used = BTreeSet::new();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut lr = cfg.learning_rate;
        for _ in 0..cfg.steps_per_epoch {
            lr = cosine_lr(cfg.learning_rate, step, total_steps);
            opt.set_learning_rate(lr);
            let picks: Vec<&(usize, Window)> =
                (0..cfg.batch_size).map(|_| &train[rng.random_range(0..train.len())]).collect();
            let mut hist = Vec::with_capacity(picks.len());
            let mut tgt = Vec::with_capacity(picks.len());
            for (ci, w) in &picks {
                let c: &PreparedCustomer = &data.customers[*ci];
                guard.check(c)?;
                used.insert(c.customer_id.as_str());
                hist.push(c.history(w));
                tgt.push(c.target(w));
            }
            let pred = model.forecast(&model.windows_tensor(&hist)?, cfg.horizon, &mut Mode::Train(&mut dropout_rng))?;
            let loss = signal_decay_loss(&pred, &stack_rows(model, &tgt)?, cfg.reduction)?;
            let value = loss.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFinite { stage: "finetune loss", layer: step });
            }
            opt.backward_step(&loss)?;
            loss_sum += value;
            step += 1;
        }
        let val_mse = windows_mse(model, data, &val, cfg.horizon)?;
        curve.push(EpochRecord {
            epoch,
            train_loss: if cfg.steps_per_epoch > 0 { loss_sum / cfg.steps_per_epoch as f64 } else { 0.0 },
            val_mse,
            learning_rate: lr,
        });
        let Some(v) = val_mse else { continue };
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, epoch, model.params.snapshot()?));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, snap)) => {
            model.params.restore(&snap)?;
            Some(epoch)
        }
        None => None,
    };
    let parts: BTreeSet<String> = data
        .customers
        .iter()
        .filter(|c| used.contains(c.customer_id.as_str()))
        .filter_map(|c| c.part.map(|p| p.to_string()))
        .collect();
    let lineage = LineageEntry {
        stage: format!("finetune_h{}", cfg.horizon),
        part: (parts.len() == 1).then(|| parts.into_iter().next().expect("one part")),
        customers: used.into_iter().map(String::from).collect(),
    };
    Ok(FinetuneOutcome { curve, best_epoch, lineage })
}

/// One forecast in normalized and original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub customer_id: String,
    /// Date of the first forecast day.
    pub origin_date: NaiveDate,
    pub predictions: Vec<f64>,
    pub predictions_denorm: Vec<f64>,
}

/// Forecasts for several windows of one customer.
pub fn predict_windows(model: &Model, customer: &PreparedCustomer, windows: &[Window], horizon: usize) -> Result<Vec<ForecastResult>> {
    if !model.has_forecast_head(horizon) {
        return Err(Error::config(format!("model has no head for horizon {horizon}")));
    }
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_CHUNK) {
        if let Some(w) = chunk.iter().find(|w| w.horizon != horizon) {
            return Err(Error::config(format!("window horizon {} vs requested {horizon}", w.horizon)));
        }
        let hist: Vec<&[f64]> = chunk.iter().map(|w| customer.history(w)).collect();
        let pred = model.forecast(&model.windows_tensor(&hist)?, horizon, &mut Mode::Eval)?.to_vec2::<f64>()?;
        for (w, p) in chunk.iter().zip(pred) {
            out.push(ForecastResult {
                customer_id: customer.customer_id.clone(),
                origin_date: customer.start_date + chrono::Days::new(w.target().start as u64),
                predictions_denorm: customer.stats.denormalize_all(&p),
                predictions: p,
            });
        }
    }
    Ok(out)
}

/// Forecast for a single normalized history window.
pub fn predict(model: &Model, customer: &PreparedCustomer, window: &Window, horizon: usize) -> Result<ForecastResult> {
    Ok(predict_windows(model, customer, std::slice::from_ref(window), horizon)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub customer_id: String,
    pub origin_date: NaiveDate,
    pub step: usize,
    pub prediction: f64,
    pub prediction_denorm: f64,
    pub target: f64,
    pub target_denorm: f64,
}

/// Rows for the forecast export; `step` is 1-based.
pub fn forecast_rows(result: &ForecastResult, customer: &PreparedCustomer, window: &Window) -> Vec<ForecastRow> {
    let target = customer.target(window);
    (0..result.predictions.len())
        .map(|l| ForecastRow {
            customer_id: result.customer_id.clone(),
            origin_date: result.origin_date,
            step: l + 1,
            prediction: result.predictions[l],
            prediction_denorm: result.predictions_denorm[l],
            target: target[l],
            target_denorm: customer.stats.denormalize(target[l]),
        })
        .collect()
}

pub fn write_forecast_csv(path: &Path, rows: &[ForecastRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
