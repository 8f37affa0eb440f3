//! Raw meter readings to split, normalized customers: consolidation, screening,
//! imputation and the chronological split.

use gasfm::data::{
    explode_to_readings, generate_synthetic_dataset, metadata_of, prepare_dataset, LinearInterpolation, PrepareConfig,
    PreparedDataset, RawMeterReading, Region, SplitSpec, SynthConfig,
};

fn main() -> gasfm::Result<()> {
    let synth = SynthConfig { customers: 20, missing_rate: 0.05, ..SynthConfig::default() };
    let (series, _) = generate_synthetic_dataset(&synth, 3)?;
    let mut readings = explode_to_readings(&series, 3);
    // a negative reading is rejected, a 40-day customer is too short
    readings[10].volume = -1.0;
    let start = series[0].start_date;
    readings.extend((0..40).map(|d| RawMeterReading {
        customer_id: "tiny".into(),
        meter_id: "m0".into(),
        date: start + chrono::Days::new(d),
        volume: 12.0,
    }));
    println!("{} raw readings", readings.len());

    let (clean, report) = prepare_dataset(&readings, &metadata_of(&series), &PrepareConfig::default(), &LinearInterpolation)?;
    println!("{report:?}");

    let spec = SplitSpec::default();
    let data = PreparedDataset::new(&clean, spec)?;
    for c in data.customers.iter().take(5) {
        println!(
            "{} [{}] mean {:.1} std {:.1}  train {:?} val {:?} test {:?}  test windows {}",
            c.customer_id,
            c.industry,
            c.stats.mean,
            c.stats.std,
            c.regions.train,
            c.regions.val,
            c.regions.test,
            c.windows(Region::Test, &spec).len()
        );
    }
    Ok(())
}
