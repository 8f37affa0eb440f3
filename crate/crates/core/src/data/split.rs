use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chronological split geometry shared by every customer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Length of the final test span in days ("six months").
    pub test_span_days: usize,
    /// Train:validation ratio applied to everything before the test span.
    pub train_val_ratio: (usize, usize),
    pub history_len: usize,
    pub horizon: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_span_days: 183, train_val_ratio: (7, 1), history_len: 96, horizon: 30 }
    }
}

impl SplitSpec {
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 || self.horizon == 0 {
            return Err(Error::config("history_len and horizon must be positive"));
        }
        let (a, b) = self.train_val_ratio;
        if a == 0 || b == 0 {
            return Err(Error::config("train_val_ratio entries must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Train,
    Val,
    Test,
}

/// Day ranges of the three regions for one series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Regions {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Regions {
    pub fn range(&self, region: Region) -> Range<usize> {
        match region {
            Region::Train => self.train.clone(),
            Region::Val => self.val.clone(),
            Region::Test => self.test.clone(),
        }
    }
}

/// A (history, target) window addressed by the first history day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub history_len: usize,
    pub horizon: usize,
}

impl Window {
    pub fn history(&self) -> Range<usize> {
        self.start..self.start + self.history_len
    }

    pub fn target(&self) -> Range<usize> {
        let t0 = self.start + self.history_len;
        t0..t0 + self.horizon
    }

    pub fn end(&self) -> usize {
        self.start + self.history_len + self.horizon
    }
}

/// Splits a series of length `len`: the final `test_span_days` form the test
/// region and the remainder is divided chronologically with the train share
/// rounded down.
pub fn make_splits(len: usize, spec: &SplitSpec) -> Result<Regions> {
    spec.validate()?;
    if len <= spec.test_span_days {
        return Err(Error::data(format!(
            "series of length {len} leaves nothing before a {}-day test span",
            spec.test_span_days
        )));
    }
    let rest = len - spec.test_span_days;
    let (a, b) = spec.train_val_ratio;
    let train_end = rest * a / (a + b);
    Ok(Regions { train: 0..train_end, val: train_end..rest, test: rest..len })
}

/// Windows of one region, stride 1.
///
/// A window belongs to the region that contains its whole target. Its history
/// is the `history_len` days right before the target and may reach back into
/// earlier regions for validation and test; training windows lie entirely in
/// the training region.
pub fn region_windows(regions: &Regions, region: Region, spec: &SplitSpec) -> Vec<Window> {
    let range = regions.range(region);
    let (n, h) = (spec.history_len, spec.horizon);
    if range.end < range.start + h {
        return Vec::new();
    }
    let first_target = range.start.max(n);
    let last_target = range.end - h;
    if first_target > last_target {
        return Vec::new();
    }
    (first_target..=last_target)
        .map(|t0| Window { start: t0 - n, history_len: n, horizon: h })
        .collect()
}

/// All three regions' windows. Logs when a customer has no test window.
pub fn split_windows(customer_id: &str, len: usize, spec: &SplitSpec) -> Result<SplitWindows> {
    let regions = make_splits(len, spec)?;
    let out = SplitWindows {
        train: region_windows(&regions, Region::Train, spec),
        val: region_windows(&regions, Region::Val, spec),
        test: region_windows(&regions, Region::Test, spec),
        regions,
    };
    if out.test.is_empty() {
        log::warn!("{customer_id}: too short for any test window (length {len}); excluded from test");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitWindows {
    pub regions: Regions,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}
