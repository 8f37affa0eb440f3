use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Label used when a customer's industry is not known.
pub const UNKNOWN_INDUSTRY: &str = "UNKNOWN";

/// One meter's reading for one day, before consolidation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeterReading {
    pub customer_id: String,
    pub meter_id: String,
    pub date: NaiveDate,
    pub volume: f64,
}

/// Static attributes of a customer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomerMetadata {
    pub customer_id: String,
    pub industry_l1: String,
    #[serde(default)]
    pub industry_l2: Option<String>,
    pub province: String,
    pub city: String,
}

/// A customer's consolidated daily consumption series.
///
/// `values[t]` is the consumption on `start_date + t` days. Unobserved days
/// carry a placeholder value (0.0) and `observed_mask[t] == false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerSeries {
    pub customer_id: String,
    pub industry_l1: String,
    #[serde(default)]
    pub industry_l2: Option<String>,
    pub province: String,
    pub city: String,
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
    pub observed_mask: Vec<bool>,
}

impl CustomerSeries {
    /// A fully observed series with unknown metadata.
    pub fn from_values(customer_id: impl Into<String>, start_date: NaiveDate, values: Vec<f64>) -> Self {
        let mask = vec![true; values.len()];
        Self {
            customer_id: customer_id.into(),
            industry_l1: UNKNOWN_INDUSTRY.to_string(),
            industry_l2: None,
            province: UNKNOWN_INDUSTRY.to_string(),
            city: UNKNOWN_INDUSTRY.to_string(),
            start_date,
            values,
            observed_mask: mask,
        }
    }

    pub fn with_industry(mut self, industry: impl Into<String>) -> Self {
        self.industry_l1 = industry.into();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed_mask.iter().all(|&m| m)
    }

    pub fn observed_count(&self) -> usize {
        self.observed_mask.iter().filter(|&&m| m).count()
    }

    /// Observed values in time order.
    pub fn observed_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.observed_mask)
            .filter_map(|(&v, &m)| m.then_some(v))
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(index as u64)
    }

    pub fn apply_metadata(&mut self, meta: &CustomerMetadata) {
        self.industry_l1 = meta.industry_l1.clone();
        self.industry_l2 = meta.industry_l2.clone();
        self.province = meta.province.clone();
        self.city = meta.city.clone();
    }
}
