//! Rotary position encoding.
//!
//! Dimension pairs `(2j, 2j+1)` of a head vector at position `m` are rotated by
//! `m·θ_j` with `θ_j = base^(−2j/head_dim)`, so `⟨rope(q, m), rope(k, n)⟩`
//! depends on `m − n` only.

use candle_core::{Device, Tensor, D};

use crate::error::{Error, Result};

fn check_even(dim: usize) -> Result<()> {
    if dim % 2 != 0 {
        return Err(Error::config(format!("rotary encoding needs an even head dimension, got {dim}")));
    }
    Ok(())
}

#[inline]
fn theta(j: usize, dim: usize, base: f64) -> f64 {
    base.powf(-2.0 * j as f64 / dim as f64)
}

/// Rotates one head vector to position `pos`.
pub fn rotate(x: &[f64], pos: usize, base: f64) -> Result<Vec<f64>> {
    check_even(x.len())?;
    let dim = x.len();
    let mut out = vec![0.0; dim];
    for j in 0..dim / 2 {
        let (s, c) = (pos as f64 * theta(j, dim, base)).sin_cos();
        let (a, b) = (x[2 * j], x[2 * j + 1]);
        out[2 * j] = a * c - b * s;
        out[2 * j + 1] = a * s + b * c;
    }
    Ok(out)
}

/// Rotates a query and a key to their respective positions.
pub fn apply_rope(q: &[f64], k: &[f64], pos_q: usize, pos_k: usize, base: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if q.len() != k.len() {
        return Err(Error::shape(format!("query dim {} vs key dim {}", q.len(), k.len())));
    }
    Ok((rotate(q, pos_q, base)?, rotate(k, pos_k, base)?))
}

/// Precomputed cos/sin tables for positions `0..max_positions`.
#[derive(Debug, Clone)]
pub struct RopeTable {
    cos: Tensor,
    sin: Tensor,
    head_dim: usize,
}

impl RopeTable {
    pub fn new(max_positions: usize, head_dim: usize, base: f64, device: &Device) -> Result<Self> {
        check_even(head_dim)?;
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(max_positions * half);
        let mut sin = Vec::with_capacity(max_positions * half);
        for m in 0..max_positions {
            for j in 0..half {
                let (s, c) = (m as f64 * theta(j, head_dim, base)).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Ok(Self {
            cos: Tensor::from_vec(cos, (max_positions, half), device)?,
            sin: Tensor::from_vec(sin, (max_positions, half), device)?,
            head_dim,
        })
    }

    /// Rotates `x` of shape `(batch, heads, positions, head_dim)`; position `p`
    /// uses row `p` of the tables.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, p, d) = x.dims4()?;
        if d != self.head_dim {
            return Err(Error::shape(format!("rope head_dim {} vs input {}", self.head_dim, d)));
        }
        let half = d / 2;
        let cos = self.cos.narrow(0, 0, p)?;
        let sin = self.sin.narrow(0, 0, p)?;
        let pairs = x.reshape((b, h, p, half, 2))?;
        let even = pairs.narrow(D::Minus1, 0, 1)?.squeeze(D::Minus1)?;
        let odd = pairs.narrow(D::Minus1, 1, 1)?.squeeze(D::Minus1)?;
        let out_even = (even.broadcast_mul(&cos)? - odd.broadcast_mul(&sin)?)?;
        let out_odd = (even.broadcast_mul(&sin)? + odd.broadcast_mul(&cos)?)?;
        Ok(Tensor::stack(&[out_even, out_odd], D::Minus1)?.reshape((b, h, p, d))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_position_is_identity() {
        let q = [0.3, -1.2, 0.5, 2.0];
        let k = [1.0, 0.0, -0.5, 0.25];
        let (rq, rk) = apply_rope(&q, &k, 0, 0, 10_000.0).unwrap();
        assert_eq!(rq, q.to_vec());
        assert_eq!(rk, k.to_vec());
    }

    #[test]
    fn relative_offset_example() {
        let q = [0.3, -1.2, 0.5, 2.0, 0.7, -0.1];
        let k = [1.0, 0.4, -0.5, 0.25, 0.9, 1.1];
        let (a, b) = apply_rope(&q, &k, 5, 9, 10_000.0).unwrap();
        let (c, d) = apply_rope(&q, &k, 0, 4, 10_000.0).unwrap();
        assert!((dot(&a, &b) - dot(&c, &d)).abs() < 1e-5);
    }

    #[test]
    fn odd_dim_is_config_error() {
        assert!(matches!(rotate(&[1.0, 2.0, 3.0], 1, 10_000.0), Err(Error::Config(_))));
        assert!(RopeTable::new(4, 3, 10_000.0, &Device::Cpu).is_err());
    }

    #[test]
    fn tensor_path_matches_scalar_path() {
        let (b, h, p, d) = (2, 3, 5, 4);
        let data: Vec<f64> = (0..b * h * p * d).map(|i| ((i * 7919) % 113) as f64 / 50.0 - 1.0).collect();
        let x = Tensor::from_vec(data.clone(), (b, h, p, d), &Device::Cpu).unwrap();
        let table = RopeTable::new(8, d, 10_000.0, &Device::Cpu).unwrap();
        let y = table.apply(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for bi in 0..b {
            for hi in 0..h {
                for pi in 0..p {
                    let off = ((bi * h + hi) * p + pi) * d;
                    let expect = rotate(&data[off..off + d], pi, 10_000.0).unwrap();
                    for j in 0..d {
                        assert!((y[off + j] - expect[j]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
