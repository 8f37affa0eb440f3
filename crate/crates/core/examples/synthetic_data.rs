//! Generate the synthetic customer panel and look at its shape and
//! stationarity per archetype.

use std::collections::BTreeMap;

use gasfm::data::adf::series_adf;
use gasfm::data::{generate_synthetic_dataset, impute_all, LinearInterpolation, SynthConfig};

fn main() -> gasfm::Result<()> {
    let cfg = SynthConfig { customers: 60, ..SynthConfig::default() };
    let (series, manifest) = generate_synthetic_dataset(&cfg, 7)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);

    let full = impute_all(&series, &LinearInterpolation)?;
    let mut by_industry: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &full {
        if let Some(r) = series_adf(&s.values) {
            by_industry.entry(s.industry_l1.as_str()).or_default().push(r.statistic);
        }
    }
    for (industry, stats) in by_industry {
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        println!("{industry:<12} {:>3} series  mean ADF {mean:>7.3}", stats.len());
    }
    let s = &full[0];
    println!("{} starts {} with {} days: {:?} ...", s.customer_id, s.start_date, s.len(), &s.values[..7]);
    Ok(())
}
