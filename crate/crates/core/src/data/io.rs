use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::series::{CustomerMetadata, CustomerSeries, RawMeterReading, UNKNOWN_INDUSTRY};
use super::synth::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct ReadingRow {
    customer_id: String,
    meter_id: String,
    date: String,
    volume: f64,
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::data(format!("bad date `{s}`: {e}")))
}

/// Reads `customer_id,meter_id,date,volume` CSV with ISO-8601 dates.
pub fn read_readings_csv(path: &Path) -> Result<Vec<RawMeterReading>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ReadingRow = row?;
        out.push(RawMeterReading {
            customer_id: row.customer_id,
            meter_id: row.meter_id,
            date: parse_date(&row.date)?,
            volume: row.volume,
        });
    }
    Ok(out)
}

/// JSON-lines variant of [`read_readings_csv`]: one reading object per line.
pub fn read_readings_jsonl(path: &Path) -> Result<Vec<RawMeterReading>> {
    let file = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Picks the reader by extension (`.jsonl`/`.json` vs anything else as CSV).
pub fn read_readings(path: &Path) -> Result<Vec<RawMeterReading>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => read_readings_jsonl(path),
        _ => read_readings_csv(path),
    }
}

pub fn write_readings_csv(path: &Path, readings: &[RawMeterReading]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["customer_id", "meter_id", "date", "volume"])?;
    for r in readings {
        w.write_record([
            r.customer_id.as_str(),
            r.meter_id.as_str(),
            &r.date.format("%Y-%m-%d").to_string(),
            &r.volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `customer_id,industry_l1,industry_l2,province,city`. Empty industry
/// cells become `UNKNOWN`.
pub fn read_metadata_csv(path: &Path) -> Result<Vec<CustomerMetadata>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let l1 = get(1);
        let l2 = get(2);
        out.push(CustomerMetadata {
            customer_id: get(0),
            industry_l1: if l1.is_empty() { UNKNOWN_INDUSTRY.to_string() } else { l1 },
            industry_l2: (!l2.is_empty()).then_some(l2),
            province: get(3),
            city: get(4),
        });
    }
    Ok(out)
}

pub fn write_metadata_csv(path: &Path, series: &[CustomerSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["customer_id", "industry_l1", "industry_l2", "province", "city"])?;
    for s in series {
        w.write_record([
            s.customer_id.as_str(),
            s.industry_l1.as_str(),
            s.industry_l2.as_deref().unwrap_or(""),
            s.province.as_str(),
            s.city.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON record per customer.
pub fn write_dataset_jsonl(path: &Path, series: &[CustomerSeries]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in series {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_jsonl(path: &Path) -> Result<Vec<CustomerSeries>> {
    let file = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: CustomerSeries = serde_json::from_str(&line)?;
        if s.values.len() != s.observed_mask.len() {
            return Err(Error::data(format!(
                "line {}: {} values but {} mask entries",
                i + 1,
                s.values.len(),
                s.observed_mask.len()
            )));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn readings_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rs = vec![RawMeterReading {
            customer_id: "c1".into(),
            meter_id: "m".into(),
            date: NaiveDate::from_ymd_opt(2022, 2, 28).unwrap(),
            volume: 12.5,
        }];
        write_readings_csv(&p, &rs).unwrap();
        assert_eq!(read_readings(&p).unwrap(), rs);
    }

    #[test]
    fn readings_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        std::fs::write(&p, "{\"customer_id\":\"a\",\"meter_id\":\"m\",\"date\":\"2020-01-02\",\"volume\":1.0}\n").unwrap();
        let rs = read_readings(&p).unwrap();
        assert_eq!(rs[0].date, NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
    }

    #[test]
    fn metadata_unknown_industry() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "customer_id,industry_l1,industry_l2,province,city\na,,,P1,C1\nb,glass,float,P2,C2\n").unwrap();
        let m = read_metadata_csv(&p).unwrap();
        assert_eq!(m[0].industry_l1, UNKNOWN_INDUSTRY);
        assert_eq!(m[0].industry_l2, None);
        assert_eq!(m[1].industry_l2.as_deref(), Some("float"));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let s = vec![CustomerSeries::from_values("x", NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), vec![0.1, 1e-17, 3.0])];
        write_dataset_jsonl(&p, &s).unwrap();
        assert_eq!(read_dataset_jsonl(&p).unwrap(), s);
    }
}
