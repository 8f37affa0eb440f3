//! Self-supervised pretraining: overlapping-window contrastive learning with
//! false-negative exclusion, noise-mixing contrastive learning and
//! cross-attention denoising reconstruction.

pub mod augment;
pub mod loss;
pub mod mask;
mod trainer;

use serde::{Deserialize, Serialize};

pub use augment::{noise_mix_augment, overlap_offset, overlap_sample, MixedViews};
pub use loss::{
    combined_pretrain_loss, contrastive_loss_ssl1, contrastive_loss_ssl2, cosine_similarity_matrix, denoise_loss,
    loss_weights, pooled_representation, similarity_matrix, similarity_matrix_count, smooth_l1, LossTerms, Reduction,
    Similarity,
};
pub use mask::{false_negative_mask, FalseNegativeMask};
pub use trainer::{pretrain, write_log_jsonl, PretrainLogEntry, PretrainOutcome};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    /// Weight of the mixed-in other sample.
    pub mix_alpha: f64,
    pub smooth_l1_beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub fn_top_k: usize,
    pub noise_std_ratio: f64,
    pub overlap_ratio: f64,
    pub similarity: Similarity,
    pub denoise_reduction: Reduction,
    /// Both contrastive terms.
    pub use_contrastive: bool,
    /// Reconstruction term.
    pub use_denoise: bool,
    /// False-negative exclusion in the overlap contrastive term.
    pub use_fn_exclusion: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            mix_alpha: 0.1,
            smooth_l1_beta: 0.01,
            lambda1: 0.2,
            lambda2: 0.2,
            fn_top_k: 1,
            noise_std_ratio: 0.1,
            overlap_ratio: 0.5,
            similarity: Similarity::Cosine,
            denoise_reduction: Reduction::Mean,
            use_contrastive: true,
            use_denoise: true,
            use_fn_exclusion: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            problems.push(format!("loss.temperature must be > 0 (got {})", self.temperature));
        }
        if !(0.0..1.0).contains(&self.mix_alpha) {
            problems.push(format!("loss.mix_alpha must be in [0, 1) (got {})", self.mix_alpha));
        }
        if !(self.smooth_l1_beta > 0.0) {
            problems.push(format!("loss.smooth_l1_beta must be > 0 (got {})", self.smooth_l1_beta));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            problems.push(format!("loss.lambda1/lambda2 must be >= 0 (got {}, {})", self.lambda1, self.lambda2));
        } else if self.lambda1 + self.lambda2 >= 1.0 {
            problems.push(format!(
                "loss.lambda1 + loss.lambda2 must be < 1 (got {})",
                self.lambda1 + self.lambda2
            ));
        }
        if !(self.noise_std_ratio >= 0.0) {
            problems.push(format!("loss.noise_std_ratio must be >= 0 (got {})", self.noise_std_ratio));
        }
        if !(0.0..=1.0).contains(&self.overlap_ratio) {
            problems.push(format!("loss.overlap_ratio must be in [0, 1] (got {})", self.overlap_ratio));
        }
        if !self.use_contrastive && !self.use_denoise {
            problems.push("at least one of loss.use_contrastive and loss.use_denoise must be set".into());
        }
        if !self.use_denoise && self.lambda1 + self.lambda2 == 0.0 {
            problems.push("contrastive-only training needs lambda1 + lambda2 > 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    /// Pairs per batch (`B`); the batch holds `2B` views.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 300, batch_size: 16, learning_rate: 1e-3, seed: 0, loss: LossConfig::default() }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size < 2 {
            return Err(Error::config(format!("pretrain.batch_size must be >= 2 (got {})", self.batch_size)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("pretrain.learning_rate must be > 0 (got {})", self.learning_rate)));
        }
        Ok(())
    }
}
