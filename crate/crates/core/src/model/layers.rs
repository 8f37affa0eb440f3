use candle_core::{Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::rope::RopeTable;
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-6;

/// Forward-pass mode. Training mode carries the RNG used for dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub fn dropout(x: &Tensor, p: f64, mode: &mut Mode) -> Result<Tensor> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..x.elem_count())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
            Ok(x.mul(&mask)?)
        }
        _ => Ok(x.clone()),
    }
}

/// `x · W (+ b)` over the last dimension; `W` is stored `(in, out)`.
pub fn linear(ps: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = ps.get(&format!("{prefix}.weight"))?;
    let (fan_in, fan_out) = w.dims2()?;
    let dims = x.dims().to_vec();
    let last = *dims.last().ok_or_else(|| Error::shape("linear on a scalar"))?;
    if last != fan_in {
        return Err(Error::shape(format!("{prefix}: input dim {last}, weight expects {fan_in}")));
    }
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let mut y = x.reshape((rows, fan_in))?.matmul(w)?;
    let bias_name = format!("{prefix}.bias");
    if ps.contains(&bias_name) {
        y = y.broadcast_add(ps.get(&bias_name)?)?;
    }
    let mut out_dims = dims;
    *out_dims.last_mut().expect("non-empty") = fan_out;
    Ok(y.reshape(out_dims)?)
}

pub fn rms_norm(ps: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor> {
    let gain = ps.get(name)?;
    let ms = x.sqr()?.mean_keepdim(D::Minus1)?;
    let denom = (ms + NORM_EPS)?.sqrt()?;
    Ok(x.broadcast_div(&denom)?.broadcast_mul(gain)?)
}

/// Softmax over the last dimension with max subtraction.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, p, d) = x.dims3()?;
    Ok(x.reshape((b, p, heads, d / heads))?.transpose(1, 2)?.contiguous()?)
}

/// Multi-head attention with rotary positions on queries and keys.
///
/// Queries come from `q_src` `(B, Pq, D)`, keys and values from `kv_src`
/// `(B, Pk, D)`. Returns the projected output and the attention weights
/// `(B, H, Pq, Pk)`.
pub fn attention(
    ps: &ParamStore,
    prefix: &str,
    q_src: &Tensor,
    kv_src: &Tensor,
    heads: usize,
    rope: &RopeTable,
) -> Result<(Tensor, Tensor)> {
    let (b, pq, d) = q_src.dims3()?;
    let (bk, _, dk) = kv_src.dims3()?;
    if b != bk || d != dk {
        return Err(Error::shape(format!(
            "{prefix}: query batch/dim ({b}, {d}) vs key ({bk}, {dk})"
        )));
    }
    let hd = d / heads;
    let q = rope.apply(&split_heads(&linear(ps, &format!("{prefix}.wq"), q_src)?, heads)?)?;
    let k = rope.apply(&split_heads(&linear(ps, &format!("{prefix}.wk"), kv_src)?, heads)?)?;
    let v = split_heads(&linear(ps, &format!("{prefix}.wv"), kv_src)?, heads)?;
    let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
    let weights = softmax_last(&scores)?;
    let ctx = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, pq, d))?;
    let out = linear(ps, &format!("{prefix}.wo"), &ctx)?;
    Ok((out, weights))
}

pub fn feed_forward(ps: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let h = linear(ps, &format!("{prefix}.w1"), x)?.gelu_erf()?;
    linear(ps, &format!("{prefix}.w2"), &h)
}

pub fn check_finite(x: &Tensor, stage: &'static str, layer: usize) -> Result<()> {
    let s = x.sum_all()?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, layer })
    }
}
