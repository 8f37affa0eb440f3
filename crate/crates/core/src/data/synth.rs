//! Seeded synthetic gas-consumption generator.
//!
//! Each customer belongs to one industry archetype. A daily value is
//!
//! ```text
//! x_t = max(0, L · trend_t · annual_t · weekly_t · (1 + e_t) · shock_t)
//! ```
//!
//! with `L` a log-normal base level, `trend_t = 1 + slope·t/365`,
//! `annual_t = 1 + A·cos(2π(doy − 15)/365.25)` (winter peak), a weekday profile,
//! an AR(1) multiplicative noise `e_t` and optional shocks. Because the noise is
//! multiplicative the series is heteroscedastic.
//!
//! | archetype    | level | A    | weekly         | noise (φ, sd) | extras                         |
//! |--------------|-------|------|----------------|---------------|--------------------------------|
//! | `processing` | e^8   | 0.25 | mild weekend dip | (0.9, 0.04) | none                            |
//! | `catering`   | e^5   | 0.35 | weekend peak   | (0.3, 0.25)   | 2% daily spikes / troughs       |
//! | `glass`      | e^7.5 | 0.10 | flat           | regime switch | stable (0.8, 0.04) vs volatile (0.3, 0.35) with level jumps |
//!
//! Unknown archetype names fall back to a blend with moderate noise.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adf::weighted_adf;
use super::series::{CustomerSeries, RawMeterReading, UNKNOWN_INDUSTRY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub customers: usize,
    pub archetypes: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a given day is unobserved.
    pub missing_rate: f64,
    /// Share of customers whose label is replaced by `UNKNOWN` (the archetype
    /// still drives generation).
    pub unknown_label_fraction: f64,
    pub first_date: NaiveDate,
    /// Days available for placing series (2017-01-01 .. 2023-12-31 by default).
    pub calendar_days: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            customers: 200,
            archetypes: vec!["processing".into(), "catering".into(), "glass".into()],
            min_len: 300,
            max_len: 2355,
            missing_rate: 0.01,
            unknown_label_fraction: 0.0,
            first_date: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            calendar_days: 2556,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.archetypes.len() < 2 {
            problems.push("archetypes: at least two industry archetypes are required".to_string());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            problems.push(format!("min_len/max_len: invalid range {}..={}", self.min_len, self.max_len));
        }
        if self.max_len > self.calendar_days {
            problems.push(format!("max_len {} exceeds calendar_days {}", self.max_len, self.calendar_days));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            problems.push(format!("missing_rate {} not in [0, 1)", self.missing_rate));
        }
        if !(0.0..=1.0).contains(&self.unknown_label_fraction) {
            problems.push(format!("unknown_label_fraction {} not in [0, 1]", self.unknown_label_fraction));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

/// Summary statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub customers: usize,
    pub total_time_points: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub mean_len: f64,
    pub per_industry: BTreeMap<String, usize>,
    pub weighted_adf: Option<f64>,
}

impl DatasetManifest {
    pub fn from_series(series: &[CustomerSeries]) -> Self {
        let mut per_industry = BTreeMap::new();
        for s in series {
            *per_industry.entry(s.industry_l1.clone()).or_insert(0) += 1;
        }
        let total: usize = series.iter().map(|s| s.len()).sum();
        Self {
            customers: series.len(),
            total_time_points: total,
            min_len: series.iter().map(|s| s.len()).min().unwrap_or(0),
            max_len: series.iter().map(|s| s.len()).max().unwrap_or(0),
            mean_len: if series.is_empty() { 0.0 } else { total as f64 / series.len() as f64 },
            per_industry,
            weighted_adf: weighted_adf(series),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Archetype {
    log_level: f64,
    annual_amp: f64,
    weekly: [f64; 7],
    slope_sd: f64,
    phi: f64,
    noise_sd: f64,
    shock_rate: f64,
    regime: Option<Regime>,
}

#[derive(Debug, Clone, Copy)]
struct Regime {
    switch_prob: f64,
    volatile_phi: f64,
    volatile_sd: f64,
}

fn archetype(name: &str) -> Archetype {
    match name {
        "processing" => Archetype {
            log_level: 8.0,
            annual_amp: 0.25,
            weekly: [1.0, 1.0, 1.0, 1.0, 1.0, 0.95, 0.92],
            slope_sd: 0.04,
            phi: 0.9,
            noise_sd: 0.04,
            shock_rate: 0.0,
            regime: None,
        },
        "catering" => Archetype {
            log_level: 5.0,
            annual_amp: 0.35,
            weekly: [0.85, 0.9, 0.95, 1.0, 1.15, 1.3, 1.2],
            slope_sd: 0.1,
            phi: 0.3,
            noise_sd: 0.25,
            shock_rate: 0.02,
            regime: None,
        },
        "glass" => Archetype {
            log_level: 7.5,
            annual_amp: 0.1,
            weekly: [1.0; 7],
            slope_sd: 0.05,
            phi: 0.8,
            noise_sd: 0.04,
            shock_rate: 0.0,
            regime: Some(Regime { switch_prob: 1.0 / 60.0, volatile_phi: 0.3, volatile_sd: 0.35 }),
        },
        _ => Archetype {
            log_level: 6.5,
            annual_amp: 0.2,
            weekly: [1.0, 1.0, 1.0, 1.0, 1.05, 1.05, 0.95],
            slope_sd: 0.06,
            phi: 0.6,
            noise_sd: 0.12,
            shock_rate: 0.005,
            regime: None,
        },
    }
}

/// Generates `cfg.customers` series. Identical `(cfg, seed)` give bit-identical output.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, seed: u64) -> Result<(Vec<CustomerSeries>, DatasetManifest)> {
    use rayon::prelude::*;
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<(usize, u64)> = (0..cfg.customers).map(|i| (i, master.random::<u64>())).collect();
    let series: Vec<CustomerSeries> = plans
        .into_par_iter()
        .map(|(i, s)| generate_customer(cfg, i, s))
        .collect();
    let manifest = DatasetManifest::from_series(&series);
    Ok((series, manifest))
}

fn generate_customer(cfg: &SynthConfig, index: usize, seed: u64) -> CustomerSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = &cfg.archetypes[index % cfg.archetypes.len()];
    let arch = archetype(kind);
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let offset = rng.random_range(0..=cfg.calendar_days - len);
    let start = cfg.first_date + chrono::Days::new(offset as u64);

    let level = (arch.log_level + 0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
    let slope = arch.slope_sd * rng.sample::<f64, _>(StandardNormal);
    let amp = arch.annual_amp * (0.75 + 0.5 * rng.random::<f64>());
    let jitter: Vec<f64> = (0..7).map(|_| 1.0 + 0.02 * rng.sample::<f64, _>(StandardNormal)).collect();

    let mut e = 0.0;
    let mut volatile = false;
    let mut regime_level = 1.0;
    let mut values = Vec::with_capacity(len);
    let mut mask = Vec::with_capacity(len);
    for t in 0..len {
        let date = start + chrono::Days::new(t as u64);
        let doy = date.ordinal0() as f64;
        let wd = date.weekday().num_days_from_monday() as usize;
        let (phi, sd) = match arch.regime {
            Some(r) => {
                if rng.random::<f64>() < r.switch_prob {
                    volatile = !volatile;
                    regime_level = if volatile { rng.random_range(0.5..1.5) } else { 1.0 };
                }
                if volatile { (r.volatile_phi, r.volatile_sd) } else { (arch.phi, arch.noise_sd) }
            }
            None => (arch.phi, arch.noise_sd),
        };
        let innov = Normal::new(0.0, sd * (1.0 - phi * phi).sqrt()).expect("finite sd");
        e = phi * e + innov.sample(&mut rng);
        let mut shock = 1.0;
        if arch.shock_rate > 0.0 && rng.random::<f64>() < arch.shock_rate {
            shock = if rng.random::<bool>() { rng.random_range(1.5..2.5) } else { rng.random_range(0.2..0.5) };
        }
        let trend = (1.0 + slope * t as f64 / 365.0).max(0.1);
        let annual = 1.0 + amp * (2.0 * std::f64::consts::PI * (doy - 15.0) / 365.25).cos();
        let weekly = arch.weekly[wd] * jitter[wd];
        let x = (level * regime_level * trend * annual * weekly * (1.0 + e) * shock).max(0.0);
        let observed = rng.random::<f64>() >= cfg.missing_rate;
        values.push(if observed { x } else { 0.0 });
        mask.push(observed);
    }
    // anchor both ends so the series span matches its consolidated extent
    mask[0] = true;
    mask[len - 1] = true;
    if values[0] == 0.0 {
        values[0] = level;
    }
    if values[len - 1] == 0.0 {
        values[len - 1] = level;
    }

    let unknown = rng.random::<f64>() < cfg.unknown_label_fraction;
    let province = rng.random_range(1..=19);
    let city = rng.random_range(1..=5);
    CustomerSeries {
        customer_id: format!("C{index:05}"),
        industry_l1: if unknown { UNKNOWN_INDUSTRY.to_string() } else { kind.clone() },
        industry_l2: (!unknown).then(|| format!("{kind}-{}", rng.random_range(0..4))),
        province: format!("P{province:02}"),
        city: format!("P{province:02}-C{city}"),
        start_date: start,
        values,
        observed_mask: mask,
    }
}

/// Splits each observed day's value across one to three meters, producing raw
/// readings that consolidate back to the given series.
pub fn explode_to_readings(series: &[CustomerSeries], seed: u64) -> Vec<RawMeterReading> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in series {
        let meters = rng.random_range(1..=3usize);
        for (t, (&v, &m)) in s.values.iter().zip(&s.observed_mask).enumerate() {
            if !m {
                continue;
            }
            let date = s.date_at(t);
            if meters == 1 {
                out.push(RawMeterReading { customer_id: s.customer_id.clone(), meter_id: "M1".into(), date, volume: v });
                continue;
            }
            // main meter carries the remainder so the sum is exact up to rounding
            let share = rng.random_range(0.1..0.4) * v;
            out.push(RawMeterReading { customer_id: s.customer_id.clone(), meter_id: "M2".into(), date, volume: share });
            out.push(RawMeterReading {
                customer_id: s.customer_id.clone(),
                meter_id: "M1".into(),
                date,
                volume: v - share,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig { customers: 12, ..SynthConfig::default() };
        let (a, ma) = generate_synthetic_dataset(&cfg, 7).unwrap();
        let (b, mb) = generate_synthetic_dataset(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = generate_synthetic_dataset(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_counts() {
        let cfg = SynthConfig { customers: 100, min_len: 300, max_len: 400, ..SynthConfig::default() };
        let (s, m) = generate_synthetic_dataset(&cfg, 1).unwrap();
        assert_eq!(m.customers, 100);
        assert_eq!(m.total_time_points, s.iter().map(|x| x.len()).sum::<usize>());
        assert_eq!(m.per_industry.values().sum::<usize>(), 100);
        assert!(s.iter().all(|x| (300..=400).contains(&x.len())));
        assert!(s.iter().all(|x| x.values.iter().all(|v| *v >= 0.0)));
    }

    #[test]
    fn catering_more_variable_than_processing() {
        let mk = |kind: &str| SynthConfig {
            customers: 50,
            archetypes: vec![kind.to_string(), kind.to_string()],
            min_len: 300,
            max_len: 800,
            ..SynthConfig::default()
        };
        let mean_cv = |kind: &str| {
            let (s, _) = generate_synthetic_dataset(&mk(kind), 11).unwrap();
            s.iter().map(|x| cv(&x.observed_values().collect::<Vec<_>>())).sum::<f64>() / s.len() as f64
        };
        let catering = mean_cv("catering");
        let processing = mean_cv("processing");
        assert!(catering > processing, "catering {catering} vs processing {processing}");
    }

    #[test]
    fn invalid_ranges_rejected() {
        let bad = SynthConfig { min_len: 500, max_len: 400, ..SynthConfig::default() };
        assert!(generate_synthetic_dataset(&bad, 0).is_err());
        let one = SynthConfig { archetypes: vec!["glass".into()], ..SynthConfig::default() };
        assert!(generate_synthetic_dataset(&one, 0).is_err());
    }

    #[test]
    fn exploded_readings_consolidate_back() {
        let cfg = SynthConfig { customers: 4, min_len: 300, max_len: 320, ..SynthConfig::default() };
        let (s, _) = generate_synthetic_dataset(&cfg, 3).unwrap();
        let readings = explode_to_readings(&s, 5);
        let back = crate::data::consolidate::consolidate_readings(&readings);
        assert_eq!(back.series.len(), 4);
        for (orig, cons) in s.iter().zip(&back.series) {
            assert_eq!(orig.observed_mask, cons.observed_mask);
            for (a, b) in orig.values.iter().zip(&cons.values) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
