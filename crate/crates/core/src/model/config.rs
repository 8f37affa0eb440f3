use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch geometry over a history window of `window_len` days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub window_len: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { window_len: 96, patch_len: 16, patch_stride: 8 }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_stride == 0 || self.patch_stride > self.patch_len || self.patch_len > self.window_len {
            return Err(Error::config(format!(
                "patch geometry requires 1 <= patch_stride ({}) <= patch_len ({}) <= window_len ({})",
                self.patch_stride, self.patch_len, self.window_len
            )));
        }
        Ok(())
    }

    /// `floor((n − patch_len) / stride) + 1`
    pub fn num_patches(&self) -> usize {
        (self.window_len - self.patch_len) / self.patch_stride + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
    pub rope_base: f64,
    /// Per-window instance normalization of encoder inputs, undone on the
    /// forecast. Absorbs level drift between training and test spans.
    pub revin: bool,
    /// Largest forecast horizon a head may be created for.
    pub max_horizon: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            heads: 4,
            encoder_layers: 3,
            decoder_layers: 1,
            feedforward_dim: 128,
            dropout: 0.1,
            rope_base: 10_000.0,
            revin: true,
            max_horizon: 180,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            problems.push(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
        } else if self.head_dim() % 2 != 0 {
            problems.push(format!("head_dim {} must be even for rotary encoding", self.head_dim()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.rope_base <= 1.0 || !self.rope_base.is_finite() {
            problems.push(format!("rope_base {} must be > 1", self.rope_base));
        }
        if self.feedforward_dim == 0 || self.max_horizon == 0 {
            problems.push("feedforward_dim and max_horizon must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_geometry() {
        assert_eq!(PatchConfig::default().num_patches(), 11);
        let one = PatchConfig { window_len: 16, patch_len: 16, patch_stride: 16 };
        assert_eq!(one.num_patches(), 1);
    }

    #[test]
    fn invalid_configs() {
        assert!(PatchConfig { window_len: 10, patch_len: 16, patch_stride: 8 }.validate().is_err());
        assert!(PatchConfig { window_len: 96, patch_len: 8, patch_stride: 16 }.validate().is_err());
        assert!(ModelConfig { heads: 5, ..ModelConfig::default() }.validate().is_err());
        // 64 / 64 = 1: odd head dim
        assert!(ModelConfig { heads: 64, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn patch_count_matches_enumeration(
            (n, len, stride) in (1usize..=64)
                .prop_flat_map(|n| (Just(n), 1..=n))
                .prop_flat_map(|(n, len)| (Just(n), Just(len), 1..=len))
        ) {
            let cfg = PatchConfig { window_len: n, patch_len: len, patch_stride: stride };
            let mut count = 0;
            let mut s = 0;
            while s + len <= n {
                count += 1;
                s += stride;
            }
            prop_assert_eq!(cfg.num_patches(), count);
        }
    }
}
