//! Patch embedding, rotary-attention encoder, cross-attention denoising
//! decoder and the two output heads.
//!
//! Parameter layout (all `f64`, linear weights stored `(in, out)`):
//!
//! ```text
//! patch.proj.{weight,bias}            patch_len -> D
//! patch.pos                           (num_patches, D)
//! encoder.{i}.{attn_norm,ffn_norm}    (D)
//! encoder.{i}.attn.{wq,wk,wv,wo}      D -> D
//! encoder.{i}.ffn.{w1,w2}             D -> F -> D
//! decoder.{i}.{q_norm,kv_norm,ffn_norm}, decoder.{i}.attn.*, decoder.{i}.ffn.*
//! denoise_head.{w1,w2}                P·D -> 2D -> n
//! forecast.h{H}.{weight,bias}         P·D -> H
//! ```

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod params;
pub mod rope;

use candle_core::{Device, Tensor, D};

pub use config::{ModelConfig, PatchConfig};
pub use layers::Mode;
pub use params::{Init, ParamStore, Snapshot};
pub use rope::{apply_rope, RopeTable};

use crate::error::{Error, Result};
use layers::{attention, check_finite, dropout, feed_forward, linear, rms_norm};

/// Parameter-name prefixes that make up the representation encoder.
pub const ENCODER_PREFIXES: [&str; 2] = ["patch.", "encoder."];

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub patch: PatchConfig,
    pub params: ParamStore,
    rope: RopeTable,
    device: Device,
}

impl Model {
    /// Randomly initialized model (seeded by `cfg.init_seed`) without forecast heads.
    pub fn new(cfg: ModelConfig, patch: PatchConfig) -> Result<Self> {
        cfg.validate()?;
        patch.validate()?;
        let device = Device::Cpu;
        let d = cfg.model_dim;
        let f = cfg.feedforward_dim;
        let p = patch.num_patches();
        let mut init = Init::new(cfg.init_seed);
        let mut ps = ParamStore::new();

        ps.insert("patch.proj.weight", init.linear(patch.patch_len, d)?)?;
        ps.insert("patch.proj.bias", init.zeros(&[d])?)?;
        ps.insert("patch.pos", init.uniform(&[p, d], 0.02)?)?;

        let attn = |ps: &mut ParamStore, init: &mut Init, prefix: &str| -> Result<()> {
            for w in ["wq", "wk", "wv", "wo"] {
                ps.insert(format!("{prefix}.{w}.weight"), init.linear(d, d)?)?;
            }
            Ok(())
        };
        let ffn = |ps: &mut ParamStore, init: &mut Init, prefix: &str| -> Result<()> {
            ps.insert(format!("{prefix}.w1.weight"), init.linear(d, f)?)?;
            ps.insert(format!("{prefix}.w1.bias"), init.zeros(&[f])?)?;
            ps.insert(format!("{prefix}.w2.weight"), init.linear(f, d)?)?;
            ps.insert(format!("{prefix}.w2.bias"), init.zeros(&[d])?)?;
            Ok(())
        };

        for i in 0..cfg.encoder_layers {
            let pre = format!("encoder.{i}");
            ps.insert(format!("{pre}.attn_norm"), init.ones(&[d])?)?;
            ps.insert(format!("{pre}.ffn_norm"), init.ones(&[d])?)?;
            attn(&mut ps, &mut init, &format!("{pre}.attn"))?;
            ffn(&mut ps, &mut init, &format!("{pre}.ffn"))?;
        }
        for i in 0..cfg.decoder_layers {
            let pre = format!("decoder.{i}");
            ps.insert(format!("{pre}.q_norm"), init.ones(&[d])?)?;
            ps.insert(format!("{pre}.kv_norm"), init.ones(&[d])?)?;
            ps.insert(format!("{pre}.ffn_norm"), init.ones(&[d])?)?;
            attn(&mut ps, &mut init, &format!("{pre}.attn"))?;
            ffn(&mut ps, &mut init, &format!("{pre}.ffn"))?;
        }
        ps.insert("denoise_head.w1.weight", init.linear(p * d, 2 * d)?)?;
        ps.insert("denoise_head.w1.bias", init.zeros(&[2 * d])?)?;
        ps.insert("denoise_head.w2.weight", init.linear(2 * d, patch.window_len)?)?;
        ps.insert("denoise_head.w2.bias", init.zeros(&[patch.window_len])?)?;

        let rope = RopeTable::new(p, cfg.head_dim(), cfg.rope_base, &device)?;
        Ok(Self { cfg, patch, params: ps, rope, device })
    }

    /// Rebuilds a model around existing parameters (e.g. from a checkpoint).
    pub fn from_params(cfg: ModelConfig, patch: PatchConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        patch.validate()?;
        let device = Device::Cpu;
        let rope = RopeTable::new(patch.num_patches(), cfg.head_dim(), cfg.rope_base, &device)?;
        let model = Self { cfg, patch, params, rope, device };
        let reference = Model::new(model.cfg.clone(), model.patch)?;
        for name in reference.params.names() {
            let want = reference.params.get(name)?.dims().to_vec();
            let got = model.params.get(name)?.dims().to_vec();
            if want != got {
                return Err(Error::IncompatibleCheckpoint {
                    field: name.to_string(),
                    found: format!("{got:?}"),
                    expected: format!("{want:?}"),
                });
            }
        }
        Ok(model)
    }

    /// Copy with independent parameter storage.
    pub fn deep_clone(&self) -> Result<Self> {
        Ok(Self { params: self.params.deep_clone()?, ..self.clone() })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn num_patches(&self) -> usize {
        self.patch.num_patches()
    }

    /// Windows as a `(B, n)` tensor.
    pub fn windows_tensor(&self, windows: &[&[f64]]) -> Result<Tensor> {
        let n = self.patch.window_len;
        let mut flat = Vec::with_capacity(windows.len() * n);
        for w in windows {
            if w.len() != n {
                return Err(Error::shape(format!("window length {} but model expects {n}", w.len())));
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::data("window contains non-finite values"));
            }
            flat.extend_from_slice(w);
        }
        Ok(Tensor::from_vec(flat, (windows.len(), n), &self.device)?)
    }

    /// `(B, n)` windows to `(B, P, D)` tokens: each patch is projected
    /// linearly and the learned position row is added.
    pub fn patch_embed(&self, windows: &Tensor) -> Result<Tensor> {
        let (_, n) = windows.dims2()?;
        if n != self.patch.window_len {
            return Err(Error::shape(format!("window length {n} but model expects {}", self.patch.window_len)));
        }
        let p = self.num_patches();
        let patches: Vec<Tensor> = (0..p)
            .map(|i| windows.narrow(1, i * self.patch.patch_stride, self.patch.patch_len))
            .collect::<candle_core::Result<_>>()?;
        let patches = Tensor::stack(&patches, 1)?;
        let tokens = linear(&self.params, "patch.proj", &patches)?;
        Ok(tokens.broadcast_add(self.params.get("patch.pos")?)?)
    }

    /// Pre-norm residual encoder. Output has the input's shape.
    pub fn encode(&self, tokens: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let ps = &self.params;
        let mut x = tokens.clone();
        for i in 0..self.cfg.encoder_layers {
            let pre = format!("encoder.{i}");
            let h = rms_norm(ps, &format!("{pre}.attn_norm"), &x)?;
            let (a, _) = attention(ps, &format!("{pre}.attn"), &h, &h, self.cfg.heads, &self.rope)?;
            x = (x + dropout(&a, self.cfg.dropout, mode)?)?;
            let h = rms_norm(ps, &format!("{pre}.ffn_norm"), &x)?;
            let f = feed_forward(ps, &format!("{pre}.ffn"), &h)?;
            x = (x + dropout(&f, self.cfg.dropout, mode)?)?;
            check_finite(&x, "encoder", i)?;
        }
        Ok(x)
    }

    /// Cross-attention decoder (queries from the noisy view, keys/values from
    /// the overlapping clean view) followed by the MLP denoising head.
    /// Returns the reconstructed `(B, n)` window.
    pub fn decode_denoise(&self, noisy: &Tensor, clean: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (tokens, _) = self.decode_tokens(noisy, clean, mode)?;
        self.denoise_head(&tokens)
    }

    /// Decoder token output and the first layer's attention weights.
    pub fn decode_tokens(&self, noisy: &Tensor, clean: &Tensor, mode: &mut Mode) -> Result<(Tensor, Option<Tensor>)> {
        if noisy.dims() != clean.dims() {
            return Err(Error::shape(format!("noisy {:?} vs clean {:?}", noisy.dims(), clean.dims())));
        }
        let ps = &self.params;
        let mut x = noisy.clone();
        let mut first_weights = None;
        for i in 0..self.cfg.decoder_layers {
            let pre = format!("decoder.{i}");
            let q = rms_norm(ps, &format!("{pre}.q_norm"), &x)?;
            let kv = rms_norm(ps, &format!("{pre}.kv_norm"), clean)?;
            let (a, w) = attention(ps, &format!("{pre}.attn"), &q, &kv, self.cfg.heads, &self.rope)?;
            if first_weights.is_none() {
                first_weights = Some(w);
            }
            x = (x + dropout(&a, self.cfg.dropout, mode)?)?;
            let h = rms_norm(ps, &format!("{pre}.ffn_norm"), &x)?;
            let f = feed_forward(ps, &format!("{pre}.ffn"), &h)?;
            x = (x + dropout(&f, self.cfg.dropout, mode)?)?;
            check_finite(&x, "decoder", i)?;
        }
        Ok((x, first_weights))
    }

    pub fn denoise_head(&self, tokens: &Tensor) -> Result<Tensor> {
        let flat = tokens.flatten_from(1)?;
        let h = linear(&self.params, "denoise_head.w1", &flat)?.gelu_erf()?;
        linear(&self.params, "denoise_head.w2", &h)
    }

    fn head_prefix(horizon: usize) -> String {
        format!("forecast.h{horizon}")
    }

    pub fn has_forecast_head(&self, horizon: usize) -> bool {
        self.params.contains(&format!("{}.weight", Self::head_prefix(horizon)))
    }

    pub fn forecast_horizons(&self) -> Vec<usize> {
        let mut hs: Vec<usize> = self
            .params
            .names()
            .filter_map(|n| n.strip_prefix("forecast.h")?.strip_suffix(".weight")?.parse().ok())
            .collect();
        hs.sort_unstable();
        hs
    }

    /// Creates (or re-creates) the linear head for `horizon`.
    pub fn init_forecast_head(&mut self, horizon: usize, seed: u64) -> Result<()> {
        if horizon == 0 || horizon > self.cfg.max_horizon {
            return Err(Error::config(format!(
                "horizon {horizon} outside 1..={}",
                self.cfg.max_horizon
            )));
        }
        let fan_in = self.num_patches() * self.cfg.model_dim;
        let mut init = Init::new(seed ^ (horizon as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let pre = Self::head_prefix(horizon);
        self.params.insert(format!("{pre}.weight"), init.linear(fan_in, horizon)?)?;
        self.params.insert(format!("{pre}.bias"), init.zeros(&[horizon])?)?;
        Ok(())
    }

    /// Flattened tokens through the head for `horizon`: `(B, P, D) -> (B, H)`.
    pub fn forecast_head(&self, repr: &Tensor, horizon: usize) -> Result<Tensor> {
        if horizon == 0 || horizon > self.cfg.max_horizon {
            return Err(Error::config(format!("horizon {horizon} outside 1..={}", self.cfg.max_horizon)));
        }
        if !self.has_forecast_head(horizon) {
            return Err(Error::config(format!("no forecast head for horizon {horizon}")));
        }
        let flat = repr.flatten_from(1)?;
        linear(&self.params, &Self::head_prefix(horizon), &flat)
    }

    /// Per-row standardization `(x − mean) / std` of `(B, n)` windows, with
    /// the `(B, 1)` mean and std needed to undo it. The std carries a 1e-5
    /// variance floor.
    pub fn instance_norm(windows: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mean = windows.mean_keepdim(D::Minus1)?;
        let centered = windows.broadcast_sub(&mean)?;
        let std = (centered.sqr()?.mean_keepdim(D::Minus1)? + 1e-5)?.sqrt()?;
        Ok((centered.broadcast_div(&std)?, mean, std))
    }

    /// Windows as the encoder sees them: instance-normalized when RevIN is on,
    /// unchanged otherwise. Pretraining and forecasting both go through here.
    pub fn encoder_input(&self, windows: &Tensor) -> Result<Tensor> {
        if self.cfg.revin {
            Ok(Self::instance_norm(windows)?.0)
        } else {
            Ok(windows.clone())
        }
    }

    /// History windows `(B, n)` to forecasts `(B, H)`.
    pub fn forecast(&self, windows: &Tensor, horizon: usize, mode: &mut Mode) -> Result<Tensor> {
        if self.cfg.revin {
            let (x, mean, std) = Self::instance_norm(windows)?;
            let y = self.forecast_head(&self.encode(&self.patch_embed(&x)?, mode)?, horizon)?;
            return Ok(y.broadcast_mul(&std)?.broadcast_add(&mean)?);
        }
        let repr = self.encode(&self.patch_embed(windows)?, mode)?;
        self.forecast_head(&repr, horizon)
    }
}
