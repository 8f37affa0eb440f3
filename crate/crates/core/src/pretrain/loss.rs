use std::cell::Cell;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use super::mask::FalseNegativeMask;
use super::LossConfig;
use crate::error::{Error, Result};

/// Added under the square root of each norm so zero vectors have similarity 0.
const NORM_EPS_SQ: f64 = 1e-24;

/// Kernel used for the similarity matrix and the contrastive logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

/// How element-wise reconstruction losses are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over batch and time steps.
    #[default]
    Mean,
    /// Plain sum over every element.
    Sum,
}

thread_local! {
    static SIMILARITY_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of similarity matrices built on the current thread.
pub fn similarity_matrix_count() -> usize {
    SIMILARITY_CALLS.with(Cell::get)
}

/// Mean over the patch axis: `(N, P, D) -> (N, D)`.
pub fn pooled_representation(tokens: &Tensor) -> Result<Tensor> {
    let (_, p, _) = tokens.dims3()?;
    if p == 0 {
        return Err(Error::shape("cannot pool zero patches"));
    }
    Ok(tokens.mean(1)?)
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let values = t.flatten_all()?.to_vec1::<f64>()?;
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::data(format!("{what} contains non-finite values")))
    }
}

/// Cosine similarity of every row pair of `(N, D)`; zero rows give 0.
pub fn cosine_similarity_matrix(reps: &Tensor) -> Result<Tensor> {
    similarity_matrix(reps, Similarity::Cosine)
}

/// `(N, D) -> (N, N)` under the chosen kernel.
pub fn similarity_matrix(reps: &Tensor, kernel: Similarity) -> Result<Tensor> {
    SIMILARITY_CALLS.with(|c| c.set(c.get() + 1));
    ensure_finite(reps, "representations")?;
    match kernel {
        Similarity::Dot => Ok(reps.matmul(&reps.t()?)?),
        Similarity::Cosine => {
            let norms = (reps.sqr()?.sum_keepdim(D::Minus1)? + NORM_EPS_SQ)?.sqrt()?;
            let unit = reps.broadcast_div(&norms)?;
            Ok(unit.matmul(&unit.t()?)?)
        }
    }
}

/// Row-wise `log Σ_j allowed[r][j]·exp(logits[r][j])`, stabilized by the
/// per-row maximum over allowed entries.
fn masked_logsumexp(logits: &Tensor, allowed: &[Vec<bool>]) -> Result<Tensor> {
    let values = logits.detach().to_vec2::<f64>()?;
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    let mut maxima = Vec::with_capacity(rows);
    let mut weights = Vec::with_capacity(rows * cols);
    for (r, row) in values.iter().enumerate() {
        let m = row
            .iter()
            .zip(&allowed[r])
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        maxima.push(m);
        weights.extend(allowed[r].iter().map(|&a| if a { 1.0 } else { 0.0 }));
    }
    let device = logits.device();
    let m = Tensor::from_vec(maxima, (rows, 1), device)?;
    let w = Tensor::from_vec(weights, (rows, cols), device)?;
    let sum = (logits.broadcast_sub(&m)?.exp()? * w)?.sum_keepdim(D::Minus1)?;
    Ok((sum.log()? + m)?.squeeze(D::Minus1)?)
}

fn pick(logits: &Tensor, cols: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = cols.iter().map(|&c| c as u32).collect();
    let idx = Tensor::from_vec(idx, (cols.len(), 1), logits.device())?;
    Ok(logits.gather(&idx, 1)?.squeeze(1)?)
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("temperature must be > 0, got {tau}")))
    }
}

/// Overlap contrastive loss over pooled representations `(2B, D)`.
///
/// Rows `0..B` are anchors, row `i + B` is the positive of anchor `i`. The
/// denominator of anchor `i` runs over `j ≠ i` outside `FN(i)` and includes
/// the positive.
pub fn contrastive_loss_ssl1(reps: &Tensor, mask: &FalseNegativeMask, tau: f64, kernel: Similarity) -> Result<Tensor> {
    check_temperature(tau)?;
    let (n, _) = reps.dims2()?;
    if n % 2 != 0 || n == 0 {
        return Err(Error::shape(format!("expected 2B representations, got {n}")));
    }
    if mask.len() != n {
        return Err(Error::shape(format!("mask covers {} samples, batch has {n}", mask.len())));
    }
    let b = n / 2;
    let logits = (similarity_matrix(reps, kernel)?.narrow(0, 0, b)? / tau)?;
    let mut allowed = vec![vec![false; n]; b];
    for (i, row) in allowed.iter_mut().enumerate() {
        let mut negatives = 0;
        for (j, a) in row.iter_mut().enumerate() {
            *a = j != i && !mask.is_masked(i, j);
            if *a && j != i + b {
                negatives += 1;
            }
        }
        if negatives == 0 {
            return Err(Error::data(format!("anchor {i} has no negatives left after exclusion")));
        }
    }
    let positives: Vec<usize> = (0..b).map(|i| i + b).collect();
    let per_anchor = (masked_logsumexp(&logits, &allowed)? - pick(&logits, &positives)?)?;
    Ok(per_anchor.mean_all()?)
}

/// Noise contrastive loss. Candidates are the `B` anchors followed by their
/// `B` noisy views; anchor `i` is pulled toward its own noisy view against
/// every other candidate `j ≠ i`.
pub fn contrastive_loss_ssl2(anchors: &Tensor, noisy: &Tensor, tau: f64, kernel: Similarity) -> Result<Tensor> {
    check_temperature(tau)?;
    if anchors.dims() != noisy.dims() {
        return Err(Error::shape(format!("anchors {:?} vs noisy {:?}", anchors.dims(), noisy.dims())));
    }
    let (b, _) = anchors.dims2()?;
    let all = Tensor::cat(&[anchors, noisy], 0)?;
    let logits = (similarity_matrix(&all, kernel)?.narrow(0, 0, b)? / tau)?;
    let allowed: Vec<Vec<bool>> = (0..b).map(|i| (0..2 * b).map(|j| j != i).collect()).collect();
    let positives: Vec<usize> = (0..b).map(|i| i + b).collect();
    let per_anchor = (masked_logsumexp(&logits, &allowed)? - pick(&logits, &positives)?)?;
    Ok(per_anchor.mean_all()?)
}

/// Smooth-L1 of a single difference.
pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

/// Smooth-L1 reconstruction loss between equally shaped tensors.
pub fn denoise_loss(reconstructed: &Tensor, original: &Tensor, beta: f64, reduction: Reduction) -> Result<Tensor> {
    if reconstructed.dims() != original.dims() {
        return Err(Error::shape(format!(
            "reconstruction {:?} vs original {:?}",
            reconstructed.dims(),
            original.dims()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::config(format!("smooth-L1 beta must be > 0, got {beta}")));
    }
    let d = (reconstructed - original)?;
    let abs = d.abs()?;
    let quadratic = (d.sqr()? * (0.5 / beta))?;
    let linear = (&abs - 0.5 * beta)?;
    let per_elem = abs.lt(beta)?.where_cond(&quadratic, &linear)?;
    Ok(match reduction {
        Reduction::Mean => per_elem.mean_all()?,
        Reduction::Sum => per_elem.sum_all()?,
    })
}

/// Coefficients `(w_de, w_ssl1, w_ssl2)` after applying the ablation switches.
pub fn loss_weights(cfg: &LossConfig) -> Result<(f64, f64, f64)> {
    cfg.validate()?;
    let (l1, l2) = (cfg.lambda1, cfg.lambda2);
    Ok(match (cfg.use_denoise, cfg.use_contrastive) {
        (true, true) => (1.0 - l1 - l2, l1, l2),
        (true, false) => (1.0, 0.0, 0.0),
        (false, true) => (0.0, l1 / (l1 + l2), l2 / (l1 + l2)),
        (false, false) => unreachable!("rejected by validate"),
    })
}

/// Weighted combination of scalar sub-losses.
pub fn combined_pretrain_loss(l_de: f64, l_ssl1: f64, l_ssl2: f64, cfg: &LossConfig) -> Result<f64> {
    let (a, b, c) = loss_weights(cfg)?;
    Ok(a * l_de + b * l_ssl1 + c * l_ssl2)
}

/// Sub-loss tensors of one step; disabled terms are `None`.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub denoise: Option<Tensor>,
    pub ssl1: Option<Tensor>,
    pub ssl2: Option<Tensor>,
}

impl LossTerms {
    pub fn combine(&self, cfg: &LossConfig) -> Result<Tensor> {
        let (a, b, c) = loss_weights(cfg)?;
        let mut parts = Vec::new();
        for (w, t, name) in [(a, &self.denoise, "denoise"), (b, &self.ssl1, "ssl1"), (c, &self.ssl2, "ssl2")] {
            match t {
                Some(t) if w != 0.0 => parts.push((t * w)?),
                None if w != 0.0 => return Err(Error::config(format!("{name} loss enabled but not computed"))),
                _ => {}
            }
        }
        let mut total = parts.pop().ok_or_else(|| Error::config("no loss term enabled"))?;
        while let Some(p) = parts.pop() {
            total = (p + total)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn pooling_examples() {
        let tokens = Tensor::from_vec(vec![1.0, -2.0, -1.0, 2.0], (1, 2, 2), &Device::Cpu).unwrap();
        assert_eq!(pooled_representation(&tokens).unwrap().to_vec2::<f64>().unwrap(), vec![vec![0.0, 0.0]]);
        let one = Tensor::from_vec(vec![3.0, 4.0], (1, 1, 2), &Device::Cpu).unwrap();
        assert_eq!(pooled_representation(&one).unwrap().to_vec2::<f64>().unwrap(), vec![vec![3.0, 4.0]]);
    }

    #[test]
    fn cosine_examples() {
        let s = cosine_similarity_matrix(&t2(&[&[1.0, 2.0], &[2.0, 4.0], &[-2.0, 1.0], &[0.0, 0.0]]))
            .unwrap()
            .to_vec2::<f64>()
            .unwrap();
        assert!((s[0][0] - 1.0).abs() < 1e-12);
        assert!((s[0][1] - 1.0).abs() < 1e-12);
        assert!(s[0][2].abs() < 1e-12);
        assert_eq!(s[3][0], 0.0);
        assert!(cosine_similarity_matrix(&t2(&[&[f64::NAN, 1.0]])).is_err());
    }

    #[test]
    fn ssl1_equal_logits_is_log_count() {
        // orthogonal reps, no mask: denominators hold 3 equal terms
        let reps = t2(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
        let l = contrastive_loss_ssl1(&reps, &FalseNegativeMask::empty(4), 1.0, Similarity::Cosine).unwrap();
        assert!((scalar(&l) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ssl1_rejects_bad_inputs() {
        let reps = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(contrastive_loss_ssl1(&reps, &FalseNegativeMask::empty(2), 1.0, Similarity::Cosine).is_err());
        let reps4 = t2(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[1.0, -1.0]]);
        assert!(contrastive_loss_ssl1(&reps4, &FalseNegativeMask::empty(4), 0.0, Similarity::Cosine).is_err());
    }

    #[test]
    fn ssl2_hand_example_and_scale_invariance() {
        let anchors = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let l = contrastive_loss_ssl2(&anchors, &anchors, 1.0, Similarity::Cosine).unwrap();
        let e = std::f64::consts::E;
        assert!((scalar(&l) + (e / (e + 2.0)).ln()).abs() < 1e-12);
        let a = t2(&[&[0.3, -1.0], &[0.7, 0.2]]);
        let n = t2(&[&[0.1, -0.8], &[0.9, -0.4]]);
        let base = scalar(&contrastive_loss_ssl2(&a, &n, 0.5, Similarity::Cosine).unwrap());
        let scaled = scalar(&contrastive_loss_ssl2(&(a * 3.0).unwrap(), &(n * 3.0).unwrap(), 0.5, Similarity::Cosine).unwrap());
        assert!((base - scaled).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0, 0.01), 0.0);
        assert!((smooth_l1(0.005, 0.01) - 0.00125).abs() < 1e-15);
        assert!((smooth_l1(1.0, 0.01) - 0.995).abs() < 1e-15);
        let a = t2(&[&[0.005, 1.0]]);
        let z = t2(&[&[0.0, 0.0]]);
        let mean = scalar(&denoise_loss(&a, &z, 0.01, Reduction::Mean).unwrap());
        let sum = scalar(&denoise_loss(&a, &z, 0.01, Reduction::Sum).unwrap());
        assert!((sum - 0.99625).abs() < 1e-15);
        assert!((mean - 0.99625 / 2.0).abs() < 1e-15);
        assert!(denoise_loss(&a, &t2(&[&[0.0]]), 0.01, Reduction::Mean).is_err());
    }

    #[test]
    fn combination_examples() {
        let mut cfg = LossConfig { lambda1: 0.0, lambda2: 0.0, ..LossConfig::default() };
        assert_eq!(combined_pretrain_loss(0.7, 5.0, 9.0, &cfg).unwrap(), 0.7);
        cfg.lambda1 = 0.25;
        cfg.lambda2 = 0.25;
        assert!((combined_pretrain_loss(1.0, 1.0, 1.0, &cfg).unwrap() - 1.0).abs() < 1e-15);
        cfg.lambda1 = 0.6;
        cfg.lambda2 = 0.4;
        assert!(combined_pretrain_loss(1.0, 1.0, 1.0, &cfg).is_err());
        let no_cl = LossConfig { use_contrastive: false, ..LossConfig::default() };
        assert_eq!(combined_pretrain_loss(0.3, 5.0, 9.0, &no_cl).unwrap(), 0.3);
        let no_dn = LossConfig { use_denoise: false, ..LossConfig::default() };
        assert!((combined_pretrain_loss(9.0, 1.0, 3.0, &no_dn).unwrap() - 2.0).abs() < 1e-15);
    }
}
