use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;

use super::series::{CustomerMetadata, CustomerSeries, RawMeterReading, UNKNOWN_INDUSTRY};

/// A reading that was dropped during consolidation and why.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedReading {
    pub reading: RawMeterReading,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Consolidated {
    pub series: Vec<CustomerSeries>,
    pub rejected: Vec<RejectedReading>,
}

/// Sums readings per (customer, day) across meters and lays each customer out
/// as a contiguous daily series from its first to its last reading.
///
/// Output is sorted by customer id and is independent of input order: the
/// per-day terms are summed in (meter id, value) order.
pub fn consolidate_readings(readings: &[RawMeterReading]) -> Consolidated {
    let mut rejected = Vec::new();
    let mut per_day: BTreeMap<&str, BTreeMap<NaiveDate, Vec<(&str, f64)>>> = BTreeMap::new();

    for r in readings {
        if !r.volume.is_finite() {
            rejected.push(RejectedReading {
                reading: r.clone(),
                reason: format!("non-finite volume {}", r.volume),
            });
            continue;
        }
        if r.volume < 0.0 {
            rejected.push(RejectedReading {
                reading: r.clone(),
                reason: format!("negative volume {}", r.volume),
            });
            continue;
        }
        per_day
            .entry(r.customer_id.as_str())
            .or_default()
            .entry(r.date)
            .or_default()
            .push((r.meter_id.as_str(), r.volume));
    }

    for rej in &rejected {
        log::warn!(
            "rejected reading customer={} meter={} date={}: {}",
            rej.reading.customer_id,
            rej.reading.meter_id,
            rej.reading.date,
            rej.reason
        );
    }
    rejected.sort_by(|a, b| {
        (&a.reading.customer_id, a.reading.date, &a.reading.meter_id)
            .cmp(&(&b.reading.customer_id, b.reading.date, &b.reading.meter_id))
            .then(a.reading.volume.total_cmp(&b.reading.volume))
    });

    let series = per_day
        .into_iter()
        .map(|(customer, days)| {
            let first = *days.keys().next().expect("customer has at least one day");
            let last = *days.keys().next_back().expect("customer has at least one day");
            let len = (last - first).num_days() as usize + 1;
            let mut values = vec![0.0; len];
            let mut mask = vec![false; len];
            for (date, mut entries) in days {
                entries.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)));
                let idx = (date - first).num_days() as usize;
                values[idx] = entries.iter().map(|e| e.1).sum();
                mask[idx] = true;
            }
            CustomerSeries {
                customer_id: customer.to_string(),
                industry_l1: UNKNOWN_INDUSTRY.to_string(),
                industry_l2: None,
                province: UNKNOWN_INDUSTRY.to_string(),
                city: UNKNOWN_INDUSTRY.to_string(),
                start_date: first,
                values,
                observed_mask: mask,
            }
        })
        .collect();

    Consolidated { series, rejected }
}

/// Attaches industry and region labels; customers without metadata keep `UNKNOWN`.
pub fn attach_metadata(series: &mut [CustomerSeries], metadata: &[CustomerMetadata]) {
    let by_id: HashMap<&str, &CustomerMetadata> =
        metadata.iter().map(|m| (m.customer_id.as_str(), m)).collect();
    for s in series {
        if let Some(meta) = by_id.get(s.customer_id.as_str()) {
            s.apply_metadata(meta);
        }
    }
}
