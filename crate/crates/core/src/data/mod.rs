//! Ingestion, screening, imputation, statistics, splits and synthetic data.

pub mod adf;
pub mod consolidate;
pub mod impute;
pub mod io;
pub mod normalize;
pub mod screen;
pub mod series;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use adf::weighted_adf;
pub use consolidate::{attach_metadata, consolidate_readings};
pub use impute::{impute, ImputationAdapter, LinearInterpolation};
pub use normalize::{normalize_dataset, NormalizationStats, STD_FLOOR};
pub use screen::{filter_short_series, zscore_screen, ScreenConfig, DEFAULT_MIN_LEN};
pub use series::{CustomerMetadata, CustomerSeries, RawMeterReading, UNKNOWN_INDUSTRY};
pub use split::{make_splits, region_windows, Region, Regions, SplitSpec, Window};
pub use synth::{explode_to_readings, generate_synthetic_dataset, DatasetManifest, SynthConfig};

use crate::error::{Error, Result};

/// Which half of a two-way customer partition a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    #[serde(rename = "I")]
    One,
    #[serde(rename = "II")]
    Two,
}

impl Part {
    pub fn other(self) -> Part {
        match self {
            Part::One => Part::Two,
            Part::Two => Part::One,
        }
    }
}

impl std::fmt::Display for Part {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Part::One => "I",
            Part::Two => "II",
        })
    }
}

/// Runtime check that no sample from a held-out part reaches a training step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceGuard {
    pub forbidden: Option<Part>,
    /// Samples checked so far.
    pub checked: usize,
    /// Samples from the forbidden part that were presented (each one errors).
    pub violations: usize,
}

impl ProvenanceGuard {
    pub fn forbid(part: Part) -> Self {
        Self { forbidden: Some(part), ..Self::default() }
    }

    pub fn open() -> Self {
        Self::default()
    }

    pub fn check(&mut self, customer: &PreparedCustomer) -> Result<()> {
        self.checked += 1;
        if self.forbidden.is_some() && customer.part == self.forbidden {
            self.violations += 1;
            return Err(Error::Provenance(format!(
                "customer {} from held-out part {} entered a training step",
                customer.customer_id,
                customer.part.map_or("?".to_string(), |p| p.to_string())
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub min_len: usize,
    pub screen: ScreenConfig,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { min_len: DEFAULT_MIN_LEN, screen: ScreenConfig::default() }
    }
}

/// Counts reported by [`prepare_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub consolidated: usize,
    pub rejected_readings: usize,
    pub dropped_short: usize,
    pub dropped_screen: usize,
    pub retained: usize,
}

/// Raw readings to fully observed customer series: consolidate, label,
/// drop short series, Z-score screen, impute.
pub fn prepare_dataset(
    readings: &[RawMeterReading],
    metadata: &[CustomerMetadata],
    cfg: &PrepareConfig,
    adapter: &dyn ImputationAdapter,
) -> Result<(Vec<CustomerSeries>, PrepareReport)> {
    let consolidated = consolidate_readings(readings);
    let mut report = PrepareReport {
        consolidated: consolidated.series.len(),
        rejected_readings: consolidated.rejected.len(),
        ..PrepareReport::default()
    };
    let mut series = consolidated.series;
    attach_metadata(&mut series, metadata);
    let before = series.len();
    let series = filter_short_series(series, cfg.min_len);
    report.dropped_short = before - series.len();
    let before = series.len();
    let series = screen::screen_dataset(series, &cfg.screen)?;
    report.dropped_screen = before - series.len();
    let series = impute_all(&series, adapter)?;
    report.retained = series.len();
    Ok((series, report))
}

/// Metadata records carried by already-labelled series.
pub fn metadata_of(series: &[CustomerSeries]) -> Vec<CustomerMetadata> {
    series
        .iter()
        .map(|s| CustomerMetadata {
            customer_id: s.customer_id.clone(),
            industry_l1: s.industry_l1.clone(),
            industry_l2: s.industry_l2.clone(),
            province: s.province.clone(),
            city: s.city.clone(),
        })
        .collect()
}

/// Synthetic customers pushed through the raw-readings pipeline and split.
pub fn synthetic_dataset(
    synth: &SynthConfig,
    seed: u64,
    prepare: &PrepareConfig,
    spec: SplitSpec,
) -> Result<(PreparedDataset, PrepareReport)> {
    let (series, _) = generate_synthetic_dataset(synth, seed)?;
    let readings = explode_to_readings(&series, seed);
    let (series, report) = prepare_dataset(&readings, &metadata_of(&series), prepare, &LinearInterpolation)?;
    Ok((PreparedDataset::new(&series, spec)?, report))
}

pub fn impute_all(series: &[CustomerSeries], adapter: &dyn ImputationAdapter) -> Result<Vec<CustomerSeries>> {
    use rayon::prelude::*;
    series.par_iter().map(|s| impute(s, adapter)).collect()
}

/// A customer ready for window extraction: imputed, normalized on its training
/// region and split.
#[derive(Debug, Clone)]
pub struct PreparedCustomer {
    pub customer_id: String,
    pub industry: String,
    pub part: Option<Part>,
    pub start_date: chrono::NaiveDate,
    pub stats: NormalizationStats,
    /// Normalized values.
    pub values: Vec<f64>,
    pub regions: Regions,
}

impl PreparedCustomer {
    pub fn windows(&self, region: Region, spec: &SplitSpec) -> Vec<Window> {
        region_windows(&self.regions, region, spec)
    }

    pub fn history(&self, w: &Window) -> &[f64] {
        &self.values[w.history()]
    }

    pub fn target(&self, w: &Window) -> &[f64] {
        &self.values[w.target()]
    }
}

/// Customers prepared for training and evaluation under one split geometry.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub spec: SplitSpec,
    pub customers: Vec<PreparedCustomer>,
    /// Customers skipped because no split was possible.
    pub excluded: Vec<String>,
}

impl PreparedDataset {
    /// Requires fully observed series (impute first).
    pub fn new(series: &[CustomerSeries], spec: SplitSpec) -> Result<Self> {
        use rayon::prelude::*;
        spec.validate()?;
        if let Some(s) = series.iter().find(|s| !s.is_fully_observed()) {
            return Err(Error::data(format!("series {} has unobserved days; impute first", s.customer_id)));
        }
        let prepared: Vec<std::result::Result<PreparedCustomer, String>> = series
            .par_iter()
            .map(|s| match normalize::normalize_series(s, &spec) {
                Ok((norm, stats)) => Ok(PreparedCustomer {
                    customer_id: s.customer_id.clone(),
                    industry: s.industry_l1.clone(),
                    part: None,
                    start_date: s.start_date,
                    stats,
                    regions: make_splits(s.len(), &spec).expect("split succeeded during normalization"),
                    values: norm.values,
                }),
                Err(_) => Err(s.customer_id.clone()),
            })
            .collect();
        let mut customers = Vec::new();
        let mut excluded = Vec::new();
        for p in prepared {
            match p {
                Ok(c) => customers.push(c),
                Err(id) => {
                    log::warn!("{id}: too short to split; excluded");
                    excluded.push(id);
                }
            }
        }
        Ok(Self { spec, customers, excluded })
    }

    /// Tags each customer with its partition label.
    pub fn with_parts(mut self, assign: impl Fn(&str) -> Part) -> Self {
        for c in &mut self.customers {
            c.part = Some(assign(&c.customer_id));
        }
        self
    }

    /// Customers of one part (all customers when `part` is `None`).
    pub fn subset(&self, part: Option<Part>) -> PreparedDataset {
        PreparedDataset {
            spec: self.spec,
            customers: self.customers.iter().filter(|c| part.is_none() || c.part == part).cloned().collect(),
            excluded: self.excluded.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.customers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.customers.is_empty()
    }
}
