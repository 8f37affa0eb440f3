use std::collections::BTreeSet;

use crate::data::UNKNOWN_INDUSTRY;
use crate::error::{Error, Result};

/// Excluded negatives per sample over a batch of `2B` samples, where sample
/// `i` and `(i + B) mod 2B` are positive partners.
///
/// Neither the sample itself nor its partner is ever a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FalseNegativeMask {
    /// Top-k most similar candidates.
    pub fn1: Vec<BTreeSet<usize>>,
    /// Candidates sharing the primary industry.
    pub fn2: Vec<BTreeSet<usize>>,
}

impl FalseNegativeMask {
    pub fn empty(n: usize) -> Self {
        Self { fn1: vec![BTreeSet::new(); n], fn2: vec![BTreeSet::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.fn1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fn1.iter().chain(&self.fn2).all(BTreeSet::is_empty)
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.fn1[i].contains(&j) || self.fn2[i].contains(&j)
    }

    /// `FN(i) = FN₁(i) ∪ FN₂(i)`.
    pub fn fn_set(&self, i: usize) -> BTreeSet<usize> {
        self.fn1[i].union(&self.fn2[i]).copied().collect()
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| self.is_masked(i, j)).collect()).collect()
    }
}

pub fn partner(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Builds the exclusion sets from a `2B × 2B` similarity matrix and the
/// per-sample primary industry labels.
///
/// `FN₁(i)` holds the `top_k` highest-similarity candidates (ties go to the
/// lower index); `FN₂(i)` holds candidates with the same known industry.
/// Candidates of `i` are all samples except `i` and its partner.
pub fn false_negative_mask(sim: &[Vec<f64>], industries: &[String], top_k: usize) -> Result<FalseNegativeMask> {
    let n = sim.len();
    if n == 0 || n % 2 != 0 || sim.iter().any(|r| r.len() != n) {
        return Err(Error::shape(format!("similarity matrix must be square with even size, got {n} rows")));
    }
    if industries.len() != n {
        return Err(Error::shape(format!("{} industry labels for {n} samples", industries.len())));
    }
    let candidates_per_row = n - 2;
    if top_k > 0 && top_k >= candidates_per_row {
        return Err(Error::config(format!(
            "fn_top_k {top_k} would exclude all {candidates_per_row} negatives"
        )));
    }
    let mut mask = FalseNegativeMask::empty(n);
    for i in 0..n {
        let p = partner(i, n);
        let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i && j != p).collect();
        // stable sort keeps lower indices first among equal similarities
        candidates.sort_by(|&a, &b| sim[i][b].total_cmp(&sim[i][a]));
        mask.fn1[i] = candidates.iter().take(top_k).copied().collect();
        let label = &industries[i];
        if label != UNKNOWN_INDUSTRY {
            mask.fn2[i] = (0..n).filter(|&j| j != i && j != p && &industries[j] == label).collect();
        }
    }
    Ok(mask)
}
