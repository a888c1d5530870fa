//! Mean and spread of the sweep metrics across layouts.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::sweep::{format_metric, RESULTS_FILE};

#[derive(Debug, Deserialize)]
struct InputRow {
    algorithm: String,
    #[allow(dead_code)]
    layout: usize,
    snr_in_db: String,
    ser_in_db: String,
    status: String,
    delta_snr_db: String,
    delta_ser_db: String,
    sd_db: String,
}

/// Mean and population standard deviation of the defined values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

/// Aggregate of one algorithm at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub algorithm: String,
    pub snr_in_db: String,
    pub ser_in_db: String,
    pub runs: usize,
    pub ok: usize,
    pub delta_snr_db: Option<Stat>,
    pub delta_ser_db: Option<Stat>,
    pub sd_db: Option<Stat>,
}

#[derive(Serialize)]
struct OutputRow<'a> {
    algorithm: &'a str,
    snr_in_db: &'a str,
    ser_in_db: &'a str,
    runs: usize,
    ok: usize,
    delta_snr_mean_db: String,
    delta_snr_std_db: String,
    delta_ser_mean_db: String,
    delta_ser_std_db: String,
    sd_mean_db: String,
    sd_std_db: String,
}

fn parse_metric(text: &str) -> Result<Option<f64>> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = t.parse().with_context(|| format!("bad metric value '{t}'"))?;
    Ok(v.is_finite().then_some(v))
}

/// Aggregates a results CSV, or the results file inside a directory.
///
/// Rows are grouped by algorithm and operating point in order of first
/// appearance; only rows with status `ok` and a defined value enter a
/// statistic.
pub fn summarize(path: &Path) -> Result<Vec<AggregateRow>> {
    let file = if path.is_dir() {
        path.join(RESULTS_FILE)
    } else {
        path.to_path_buf()
    };
    let mut reader =
        csv::Reader::from_path(&file).with_context(|| format!("opening {}", file.display()))?;
    struct Group {
        key: (String, String, String),
        runs: usize,
        ok: usize,
        values: [Vec<f64>; 3],
    }
    let mut groups: Vec<Group> = Vec::new();
    for rec in reader.deserialize::<InputRow>() {
        let r = rec.with_context(|| format!("reading {}", file.display()))?;
        let key = (r.algorithm, r.snr_in_db, r.ser_in_db);
        let idx = match groups.iter().position(|g| g.key == key) {
            Some(i) => i,
            None => {
                groups.push(Group {
                    key,
                    runs: 0,
                    ok: 0,
                    values: Default::default(),
                });
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        g.runs += 1;
        if r.status != "ok" {
            continue;
        }
        g.ok += 1;
        for (slot, text) in g.values.iter_mut().zip([&r.delta_snr_db, &r.delta_ser_db, &r.sd_db]) {
            if let Some(v) = parse_metric(text)? {
                slot.push(v);
            }
        }
    }
    if groups.is_empty() {
        bail!("{} holds no result rows", file.display());
    }
    Ok(groups
        .into_iter()
        .map(|g| AggregateRow {
            algorithm: g.key.0,
            snr_in_db: g.key.1,
            ser_in_db: g.key.2,
            runs: g.runs,
            ok: g.ok,
            delta_snr_db: Stat::of(&g.values[0]),
            delta_ser_db: Stat::of(&g.values[1]),
            sd_db: Stat::of(&g.values[2]),
        })
        .collect())
}

pub fn write_summary(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mean = |s: Option<Stat>| format_metric(s.map(|s| s.mean));
    let std = |s: Option<Stat>| format_metric(s.map(|s| s.std));
    for r in rows {
        w.serialize(OutputRow {
            algorithm: &r.algorithm,
            snr_in_db: &r.snr_in_db,
            ser_in_db: &r.ser_in_db,
            runs: r.runs,
            ok: r.ok,
            delta_snr_mean_db: mean(r.delta_snr_db),
            delta_snr_std_db: std(r.delta_snr_db),
            delta_ser_mean_db: mean(r.delta_ser_db),
            delta_ser_std_db: std(r.delta_ser_db),
            sd_mean_db: mean(r.sd_db),
            sd_std_db: std(r.sd_db),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_identical_values() {
        let s = Stat::of(&[2.5; 4]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (2.5, 0.0, 4));
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn stat_uses_population_deviation() {
        let s = Stat::of(&[1.0, 2.0, 6.0]).unwrap();
        assert!((s.mean - 3.0).abs() < 1e-15);
        // ((4 + 1 + 9) / 3)^(1/2)
        assert!((s.std - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!(parse_metric("NA").unwrap(), None);
        assert_eq!(parse_metric(" 1.5 ").unwrap(), Some(1.5));
        assert!(parse_metric("x").is_err());
    }
}
