use candle_core::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Start offset of the second view: `round(n·(1 − overlap_ratio))`.
pub fn overlap_offset(window_len: usize, overlap_ratio: f64) -> usize {
    (window_len as f64 * (1.0 - overlap_ratio)).round() as usize
}

/// Start positions `(a, b)` of two overlapping windows with `b = a + offset`,
/// drawn uniformly from the valid placements in a series of length `len`.
/// `None` when the series is too short.
pub fn overlap_sample(len: usize, window_len: usize, overlap_ratio: f64, rng: &mut impl Rng) -> Option<(usize, usize)> {
    let offset = overlap_offset(window_len, overlap_ratio);
    let span = window_len + offset;
    if len < span {
        return None;
    }
    let a = rng.random_range(0..=len - span);
    Some((a, a + offset))
}

/// Noise-mixed views and the sample each one was mixed with.
#[derive(Debug, Clone)]
pub struct MixedViews {
    pub tokens: Tensor,
    pub partners: Vec<usize>,
}

/// `H'_i = (1 − α)·H̃_i + α·H̃_j` for a uniformly drawn `j ≠ i`, where `H̃` is
/// `H` plus zero-mean Gaussian noise with standard deviation
/// `noise_std_ratio·std(H_i)` (skipped when the ratio is 0).
///
/// `tokens` is `(N, P, D)` with `N ≥ 2`.
pub fn noise_mix_augment(tokens: &Tensor, alpha: f64, noise_std_ratio: f64, rng: &mut impl Rng) -> Result<MixedViews> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::config(format!("mix weight must be in [0, 1), got {alpha}")));
    }
    if !(noise_std_ratio >= 0.0) {
        return Err(Error::config(format!("noise_std_ratio must be >= 0, got {noise_std_ratio}")));
    }
    let (n, p, d) = tokens.dims3()?;
    if n < 2 {
        return Err(Error::shape("noise mixing needs at least two samples"));
    }
    let partners: Vec<usize> = (0..n)
        .map(|i| {
            let j = rng.random_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect();

    let base = if noise_std_ratio > 0.0 {
        let values = tokens.detach().flatten_all()?.to_vec1::<f64>()?;
        let per = p * d;
        let mut noise: Vec<f64> = Vec::with_capacity(values.len());
        for chunk in values.chunks(per) {
            let mean = chunk.iter().sum::<f64>() / per as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
            let sd = noise_std_ratio * var.sqrt();
            noise.extend((0..per).map(|_| sd * Distribution::<f64>::sample(&StandardNormal, rng)));
        }
        (tokens + Tensor::from_vec(noise, (n, p, d), tokens.device())?)?
    } else {
        tokens.clone()
    };

    let idx: Vec<u32> = partners.iter().map(|&j| j as u32).collect();
    let idx = Tensor::from_vec(idx, n, tokens.device())?;
    let others = base.index_select(&idx, 0)?;
    let mixed = ((&base * (1.0 - alpha))? + (others * alpha)?)?;
    Ok(MixedViews { tokens: mixed, partners })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tokens(n: usize) -> Tensor {
        let v: Vec<f64> = (0..n * 3 * 4).map(|i| ((i * 31 % 17) as f64) - 8.0).collect();
        Tensor::from_vec(v, (n, 3, 4), &Device::Cpu).unwrap()
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_offset(96, 0.5), 48);
        assert_eq!(overlap_offset(96, 1.0), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(overlap_sample(144, 96, 0.5, &mut rng), Some((0, 48)));
        assert_eq!(overlap_sample(143, 96, 0.5, &mut rng), None);
        let (a, b) = overlap_sample(500, 96, 1.0, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_when_disabled() {
        let t = tokens(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = noise_mix_augment(&t, 0.0, 0.0, &mut rng).unwrap();
        let a = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = out.tokens.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cancellation_and_recomputation() {
        let v = tokens(1).flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let both = Tensor::from_vec([v.clone(), neg].concat(), (2, 3, 4), &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = noise_mix_augment(&both, 0.5, 0.0, &mut rng).unwrap();
        assert_eq!(out.partners, vec![1, 0]);
        assert!(out.tokens.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&x| x == 0.0));

        let t = tokens(5);
        let out = noise_mix_augment(&t, 0.3, 0.0, &mut rng).unwrap();
        let src = t.to_vec3::<f64>().unwrap();
        let got = out.tokens.to_vec3::<f64>().unwrap();
        for (i, &j) in out.partners.iter().enumerate() {
            assert_ne!(i, j);
            for p in 0..3 {
                for d in 0..4 {
                    assert_eq!(got[i][p][d], (1.0 - 0.3) * src[i][p][d] + 0.3 * src[j][p][d]);
                }
            }
        }
    }

    #[test]
    fn rejects_single_sample_and_bad_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(noise_mix_augment(&tokens(1), 0.1, 0.0, &mut rng).is_err());
        assert!(noise_mix_augment(&tokens(3), 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn gaussian_noise_is_seeded() {
        let t = tokens(3);
        let a = noise_mix_augment(&t, 0.1, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = noise_mix_augment(&t, 0.1, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.tokens.to_vec3::<f64>().unwrap(), b.tokens.to_vec3::<f64>().unwrap());
        let clean = noise_mix_augment(&t, 0.1, 0.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_ne!(a.tokens.to_vec3::<f64>().unwrap(), clean.tokens.to_vec3::<f64>().unwrap());
    }
}
