//! Independent reference computations. Plain loops over `f64`, no tensors and
//! no calls into the crate's loss code.
#![allow(dead_code)]

use std::collections::BTreeSet;

pub const UNKNOWN: &str = "UNKNOWN";

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine with the convention that a zero vector has similarity 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn cosine_matrix(reps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    reps.iter().map(|a| reps.iter().map(|b| cosine(a, b)).collect()).collect()
}

/// Exclusion sets by rank counting: `j` is among the top `k` of row `i` when
/// fewer than `k` other candidates beat it (higher similarity, or equal
/// similarity at a lower index).
pub fn fn_mask_oracle(sim: &[Vec<f64>], labels: &[&str], k: usize) -> Vec<BTreeSet<usize>> {
    let n = sim.len();
    let b = n / 2;
    let mut out = vec![BTreeSet::new(); n];
    for i in 0..n {
        let partner = if i < b { i + b } else { i - b };
        let cands: Vec<usize> = (0..n).filter(|&j| j != i && j != partner).collect();
        for &j in &cands {
            let beaten_by = cands
                .iter()
                .filter(|&&c| c != j && (sim[i][c] > sim[i][j] || (sim[i][c] == sim[i][j] && c < j)))
                .count();
            let in_fn1 = beaten_by < k;
            let in_fn2 = labels[i] != UNKNOWN && labels[i] == labels[j];
            if in_fn1 || in_fn2 {
                out[i].insert(j);
            }
        }
    }
    out
}

/// Overlap contrastive loss. `None` when some anchor has no negative left.
pub fn ssl1_oracle(reps: &[Vec<f64>], masked: &[BTreeSet<usize>], tau: f64) -> Option<f64> {
    let n = reps.len();
    let b = n / 2;
    let sim = cosine_matrix(reps);
    let mut total = 0.0;
    for i in 0..b {
        let mut den = 0.0;
        let mut negatives = 0;
        for j in 0..n {
            if j == i || masked[i].contains(&j) {
                continue;
            }
            if j != i + b {
                negatives += 1;
            }
            den += (sim[i][j] / tau).exp();
        }
        if negatives == 0 {
            return None;
        }
        let num = (sim[i][i + b] / tau).exp();
        total += -(num / den).ln();
    }
    Some(total / b as f64)
}

/// Noise contrastive loss over candidates `anchors ++ noisy`.
pub fn ssl2_oracle(anchors: &[Vec<f64>], noisy: &[Vec<f64>], tau: f64) -> f64 {
    let b = anchors.len();
    let all: Vec<Vec<f64>> = anchors.iter().chain(noisy).cloned().collect();
    let mut total = 0.0;
    for i in 0..b {
        let num = (cosine(&all[i], &all[i + b]) / tau).exp();
        let den: f64 = (0..2 * b).filter(|&j| j != i).map(|j| (cosine(&all[i], &all[j]) / tau).exp()).sum();
        total += -(num / den).ln();
    }
    total / b as f64
}

pub fn smooth_l1_oracle(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d * d / (2.0 * beta)
    } else {
        d.abs() - beta / 2.0
    }
}

/// Mean smooth-L1 over all elements.
pub fn denoise_oracle(recon: &[f64], orig: &[f64], beta: f64) -> f64 {
    recon.iter().zip(orig).map(|(r, o)| smooth_l1_oracle(r - o, beta)).sum::<f64>() / recon.len() as f64
}

pub fn combined_oracle(de: f64, s1: f64, s2: f64, l1: f64, l2: f64) -> f64 {
    (1.0 - l1 - l2) * de + l1 * s1 + l2 * s2
}

/// Signal-decay loss with the horizon mean: rows are samples.
pub fn signal_decay_oracle(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let h = p.len();
        let s: f64 = (0..h).map(|l| (p[l] - t[l]).powi(2) / ((l + 1) as f64).sqrt()).sum();
        total += s / h as f64;
    }
    total / pred.len() as f64
}

/// Chronological regions recomputed from scratch: last `test` days, then a
/// floor-rounded `a:b` split of the rest.
pub fn regions_oracle(len: usize, test: usize, a: usize, b: usize) -> (usize, usize) {
    let rest = len - test;
    let train_end = (rest * a) / (a + b);
    (train_end, rest)
}
