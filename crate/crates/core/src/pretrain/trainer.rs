use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use candle_core::Tensor;
use candle_nn::Optimizer;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{noise_mix_augment, overlap_offset, overlap_sample};
use super::loss::{
    contrastive_loss_ssl1, contrastive_loss_ssl2, denoise_loss, pooled_representation, similarity_matrix,
    similarity_matrix_count, LossTerms,
};
use super::mask::{false_negative_mask, FalseNegativeMask};
use super::PretrainConfig;
use crate::data::{PreparedCustomer, PreparedDataset, ProvenanceGuard, UNKNOWN_INDUSTRY};
use crate::error::{Error, Result};
use crate::model::checkpoint::LineageEntry;
use crate::model::{Mode, Model};
use crate::optim::{adam, cosine_lr};

const PRETRAIN_PREFIXES: [&str; 4] = ["patch.", "encoder.", "decoder.", "denoise_head."];
const MAX_RESAMPLE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLogEntry {
    pub step: usize,
    pub loss_denoise: Option<f64>,
    pub loss_ssl1: Option<f64>,
    pub loss_ssl2: Option<f64>,
    pub loss: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub log: Vec<PretrainLogEntry>,
    /// Similarity matrices built during this run.
    pub similarity_evaluations: usize,
    pub lineage: LineageEntry,
}

struct Batch<'a> {
    customers: Vec<&'a PreparedCustomer>,
    windows_a: Vec<&'a [f64]>,
    windows_b: Vec<&'a [f64]>,
}

/// True when every anchor keeps at least one negative whatever the
/// similarities turn out to be.
fn negatives_guaranteed(customers: &[&PreparedCustomer], top_k: usize, exclude: bool) -> bool {
    customers.iter().enumerate().all(|(i, c)| {
        let others = customers.len() - 1;
        if !exclude {
            return others > 0;
        }
        let different = customers
            .iter()
            .enumerate()
            .filter(|&(j, o)| j != i && (c.industry == UNKNOWN_INDUSTRY || o.industry != c.industry))
            .count();
        2 * different > top_k
    })
}

fn sample_batch<'a>(
    eligible: &[&'a PreparedCustomer],
    cfg: &PretrainConfig,
    window_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<'a>> {
    let b = cfg.batch_size.min(eligible.len());
    for _ in 0..MAX_RESAMPLE {
        let mut picked: Vec<usize> = sample(rng, eligible.len(), b).into_vec();
        picked.sort_unstable();
        let customers: Vec<&PreparedCustomer> = picked.iter().map(|&i| eligible[i]).collect();
        if !negatives_guaranteed(&customers, cfg.loss.fn_top_k, cfg.loss.use_contrastive && cfg.loss.use_fn_exclusion) {
            continue;
        }
        let mut windows_a = Vec::with_capacity(b);
        let mut windows_b = Vec::with_capacity(b);
        for c in &customers {
            let train = &c.values[c.regions.train.clone()];
            let (a, bs) = overlap_sample(train.len(), window_len, cfg.loss.overlap_ratio, rng)
                .expect("eligible customers have room for both views");
            windows_a.push(&train[a..a + window_len]);
            windows_b.push(&train[bs..bs + window_len]);
        }
        return Ok(Batch { customers, windows_a, windows_b });
    }
    Err(Error::data(format!(
        "no batch of {b} customers leaves every anchor a negative after industry exclusion"
    )))
}

/// Trains the encoder, decoder and denoising head in place on the training
/// regions of `data`. Every sampled customer passes through `guard`.
pub fn pretrain(
    model: &mut Model,
    data: &PreparedDataset,
    cfg: &PretrainConfig,
    guard: &mut ProvenanceGuard,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let n = model.patch.window_len;
    let span = n + overlap_offset(n, cfg.loss.overlap_ratio);
    let eligible: Vec<&PreparedCustomer> = data.customers.iter().filter(|c| c.regions.train.len() >= span).collect();
    if eligible.len() < 2 {
        return Err(Error::data(format!(
            "pretraining needs at least two customers with {span} training days, found {}",
            eligible.len()
        )));
    }

    let mut sampler = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);

    let mut opt = adam(model.params.vars_with_prefix(&PRETRAIN_PREFIXES), cfg.learning_rate)?;
    let sim_before = similarity_matrix_count();
    let loss_cfg = &cfg.loss;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut used = BTreeSet::new();

    for step in 0..cfg.steps {
        let lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
        opt.set_learning_rate(lr);
        let batch = sample_batch(&eligible, cfg, n, &mut sampler)?;
        for c in &batch.customers {
            guard.check(c)?;
            used.insert(c.customer_id.clone());
        }
        let b = batch.customers.len();
        let all: Vec<&[f64]> = batch.windows_a.iter().chain(&batch.windows_b).copied().collect();
        let windows = model.encoder_input(&model.windows_tensor(&all)?)?;
        let embedded = model.patch_embed(&windows)?;
        let mixed = noise_mix_augment(&embedded, loss_cfg.mix_alpha, loss_cfg.noise_std_ratio, &mut noise_rng)?;
        let noisy_a = mixed.tokens.narrow(0, 0, b)?;

        let mut mode = Mode::Train(&mut dropout_rng);
        let repr = model.encode(&embedded, &mut mode)?;
        let repr_noisy = model.encode(&noisy_a, &mut mode)?;

        let mut terms = LossTerms { denoise: None, ssl1: None, ssl2: None };
        if loss_cfg.use_denoise {
            let clean_b = repr.narrow(0, b, b)?;
            let recon = model.decode_denoise(&repr_noisy, &clean_b, &mut mode)?;
            let target = windows.narrow(0, 0, b)?;
            terms.denoise = Some(denoise_loss(&recon, &target, loss_cfg.smooth_l1_beta, loss_cfg.denoise_reduction)?);
        }
        if loss_cfg.use_contrastive {
            let pooled = pooled_representation(&repr)?;
            let mask = if loss_cfg.use_fn_exclusion {
                let sim = similarity_matrix(&pooled.detach(), loss_cfg.similarity)?.to_vec2::<f64>()?;
                let labels: Vec<String> =
                    batch.customers.iter().chain(&batch.customers).map(|c| c.industry.clone()).collect();
                false_negative_mask(&sim, &labels, loss_cfg.fn_top_k)?
            } else {
                FalseNegativeMask::empty(2 * b)
            };
            terms.ssl1 = Some(contrastive_loss_ssl1(&pooled, &mask, loss_cfg.temperature, loss_cfg.similarity)?);
            let anchors = pooled.narrow(0, 0, b)?;
            let noisy_pooled = pooled_representation(&repr_noisy)?;
            terms.ssl2 =
                Some(contrastive_loss_ssl2(&anchors, &noisy_pooled, loss_cfg.temperature, loss_cfg.similarity)?);
        }
        let loss = terms.combine(loss_cfg)?;
        let value = loss.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { stage: "pretrain loss", layer: step });
        }
        opt.backward_step(&loss)?;

        let scalar = |t: &Option<Tensor>| -> Result<Option<f64>> {
            t.as_ref().map(|t| t.to_scalar::<f64>()).transpose().map_err(Error::from)
        };
        let entry = PretrainLogEntry {
            step,
            loss_denoise: scalar(&terms.denoise)?,
            loss_ssl1: scalar(&terms.ssl1)?,
            loss_ssl2: scalar(&terms.ssl2)?,
            loss: value,
            learning_rate: lr,
            seed: cfg.seed,
        };
        log::debug!("pretrain step {step}: loss {value:.6}");
        log.push(entry);
    }

    let parts: BTreeSet<String> = data
        .customers
        .iter()
        .filter(|c| used.contains(&c.customer_id))
        .filter_map(|c| c.part.map(|p| p.to_string()))
        .collect();
    let lineage = LineageEntry {
        stage: "pretrain".into(),
        part: (parts.len() == 1).then(|| parts.into_iter().next().expect("one part")),
        customers: used.into_iter().collect(),
    };
    Ok(PretrainOutcome { log, similarity_evaluations: similarity_matrix_count() - sim_before, lineage })
}

pub fn write_log_jsonl<T: Serialize>(path: &Path, entries: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
