//! Runs every algorithm over the SNR x SER x layout grid.

use std::fmt;
use std::fs;
use std::path::Path;

use aecnr_core::filters::{run_cascade, AlgorithmKind, CascadeOptions};
use aecnr_core::metrics::{frame_mask, improvement_metrics, BandSpec, MetricsReport, SdScope};
use aecnr_core::room::{synthesize_scenario, write_wav, ScenarioBundle};
use aecnr_core::Error;
use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, SdScopeSetting};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    MissingRegime,
    Degenerate,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::MissingRegime => "missing-regime",
            RunStatus::Degenerate => "degenerate",
            RunStatus::Failed => "failed",
        }
    }

    fn of(err: &Error) -> Self {
        match err {
            Error::MissingRegime { .. } => RunStatus::MissingRegime,
            Error::DegenerateScenario(_) => RunStatus::Degenerate,
            _ => RunStatus::Failed,
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One operating point of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algorithm: AlgorithmKind,
    pub layout: usize,
    pub snr_in_db: f64,
    pub ser_in_db: f64,
    pub status: RunStatus,
    pub delta_snr_db: Option<f64>,
    pub delta_ser_db: Option<f64>,
    pub sd_db: Option<f64>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    algorithm: &'a str,
    layout: usize,
    snr_in_db: String,
    ser_in_db: String,
    status: &'a str,
    delta_snr_db: String,
    delta_ser_db: String,
    sd_db: String,
}

/// Metric value with fixed precision, `NA` when undefined.
pub fn format_metric(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => "NA".to_string(),
    }
}

pub fn format_level(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(CsvRow {
            algorithm: r.algorithm.name(),
            layout: r.layout,
            snr_in_db: format_level(r.snr_in_db),
            ser_in_db: format_level(r.ser_in_db),
            status: r.status.as_str(),
            delta_snr_db: format_metric(r.delta_snr_db),
            delta_ser_db: format_metric(r.delta_ser_db),
            sd_db: format_metric(r.sd_db),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Point {
    layout: usize,
    snr: f64,
    ser: f64,
}

impl Point {
    fn tag(&self) -> String {
        format!(
            "layout{}_snr{}_ser{}",
            self.layout,
            format_level(self.snr),
            format_level(self.ser)
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub write_audio: bool,
}

/// Result of [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub config_hash: String,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != RunStatus::Ok).count()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    seed: u64,
    config_hash: &'a str,
    config_file: &'a str,
    results_file: &'a str,
    algorithms: Vec<&'a str>,
    layouts: &'a [usize],
    snr_grid_db: &'a [f64],
    ser_grid_db: &'a [f64],
    duration_seconds: f64,
    rows: usize,
    failed_rows: usize,
}

/// Runs the sweep and writes the results CSV, the effective config and a
/// manifest into `out_dir`.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let algorithms = cfg.algorithms()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let audio_dir = out_dir.join("audio");
    if opts.write_audio {
        fs::create_dir_all(&audio_dir)?;
    }

    let points: Vec<Point> = cfg
        .sweep
        .layouts
        .iter()
        .flat_map(|&layout| {
            cfg.sweep.snr_grid_db.iter().flat_map(move |&snr| {
                cfg.sweep
                    .ser_grid_db
                    .iter()
                    .map(move |&ser| Point { layout, snr, ser })
            })
        })
        .collect();

    let bands = BandSpec::third_octave();
    let run_point = |p: &Point| -> Result<Vec<ResultRow>> {
        run_point(cfg, &algorithms, &bands, *p, opts.write_audio.then_some(&*audio_dir))
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().context("starting worker pool")?;
    let per_point: Vec<Vec<ResultRow>> =
        pool.install(|| points.par_iter().map(run_point).collect::<Result<_>>())?;
    let rows: Vec<ResultRow> = per_point.into_iter().flatten().collect();

    let config_text = cfg.to_toml()?;
    let config_hash = cfg.hash()?;
    fs::write(out_dir.join(CONFIG_FILE), &config_text)?;
    write_results(&out_dir.join(RESULTS_FILE), &rows)?;
    let failed_rows = rows.iter().filter(|r| r.status != RunStatus::Ok).count();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.scenario.seed,
        config_hash: &config_hash,
        config_file: CONFIG_FILE,
        results_file: RESULTS_FILE,
        algorithms: algorithms.iter().map(|a| a.name()).collect(),
        layouts: &cfg.sweep.layouts,
        snr_grid_db: &cfg.sweep.snr_grid_db,
        ser_grid_db: &cfg.sweep.ser_grid_db,
        duration_seconds: cfg.scenario.duration_seconds,
        rows: rows.len(),
        failed_rows,
    };
    fs::write(out_dir.join(MANIFEST_FILE), toml::to_string(&manifest)?)?;
    Ok(SweepOutcome { rows, config_hash })
}

fn run_point(
    cfg: &ExperimentConfig,
    algorithms: &[AlgorithmKind],
    bands: &BandSpec,
    p: Point,
    audio_dir: Option<&Path>,
) -> Result<Vec<ResultRow>> {
    let mut scenario = cfg.scenario.clone();
    scenario.layout = p.layout;
    scenario.snr_in_db = p.snr;
    scenario.ser_in_db = p.ser;
    let row = |algorithm, status, m: Option<&MetricsReport>| ResultRow {
        algorithm,
        layout: p.layout,
        snr_in_db: p.snr,
        ser_in_db: p.ser,
        status,
        delta_snr_db: m.and_then(|m| m.delta_snr_db),
        delta_ser_db: m.and_then(|m| m.delta_ser_db),
        sd_db: m.and_then(|m| m.sd_db),
    };
    let bundle = match synthesize_scenario(&scenario, &cfg.room) {
        Ok(b) => b,
        Err(e) => {
            log::warn!("{}: scenario failed: {e}", p.tag());
            let status = RunStatus::of(&e);
            return Ok(algorithms.iter().map(|&a| row(a, status, None)).collect());
        }
    };
    if let Some(dir) = audio_dir {
        let mic = &bundle.m[bundle.reference_mic];
        write_wav(&dir.join(format!("input_{}.wav", p.tag())), std::slice::from_ref(mic), bundle.sample_rate)?;
    }
    let mut rows = Vec::with_capacity(algorithms.len());
    for &kind in algorithms {
        match evaluate(cfg, &bundle, kind, bands) {
            Ok((metrics, enhanced)) => {
                if let Some(dir) = audio_dir {
                    let path = dir.join(format!("{}_{}.wav", kind.name(), p.tag()));
                    write_wav(&path, &[enhanced], bundle.sample_rate)?;
                }
                rows.push(row(kind, RunStatus::Ok, Some(&metrics)));
            }
            Err(e) => {
                log::warn!("{} {}: {e}", kind.name(), p.tag());
                rows.push(row(kind, RunStatus::of(&e), None));
            }
        }
    }
    Ok(rows)
}

fn evaluate(
    cfg: &ExperimentConfig,
    bundle: &ScenarioBundle,
    kind: AlgorithmKind,
    bands: &BandSpec,
) -> aecnr_core::Result<(MetricsReport, Vec<f64>)> {
    let mut opts = CascadeOptions {
        speech_rank: cfg.processing.speech_rank,
        vad_threshold_db: cfg.processing.vad_threshold_db,
        transport: cfg.processing.transport(),
        pf_speech_estimate: cfg.processing.pf_speech_estimate(),
        keep_stage_signals: false,
        ..CascadeOptions::default()
    };
    opts.stft.sample_rate = bundle.sample_rate;
    let out = run_cascade(kind, bundle, &opts)?;
    let mask;
    let scope = match cfg.processing.sd_scope {
        SdScopeSetting::WholeSignal => SdScope::WholeSignal,
        SdScopeSetting::SpeechActive => {
            mask = frame_mask(
                &out.vad.speech,
                opts.stft.window_length,
                opts.stft.hop,
                out.reference.speech.len(),
            );
            SdScope::Masked(&mask)
        }
    };
    let metrics = improvement_metrics(&out.reference, &out.output, bundle.sample_rate, bands, scope)?;
    Ok((metrics, out.enhanced()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_formatting() {
        assert_eq!(format_metric(Some(1.23456)), "1.2346");
        assert_eq!(format_metric(None), "NA");
        assert_eq!(format_metric(Some(f64::NAN)), "NA");
        assert_eq!(format_level(-15.0), "-15");
        assert_eq!(format_level(f64::INFINITY), "inf");
    }

    #[test]
    fn statuses_follow_error_kinds() {
        let e = Error::MissingRegime {
            regime: "(0,1)".into(),
            context: "test".into(),
        };
        assert_eq!(RunStatus::of(&e), RunStatus::MissingRegime);
        assert_eq!(
            RunStatus::of(&Error::DegenerateScenario("x".into())),
            RunStatus::Degenerate
        );
        assert_eq!(RunStatus::of(&Error::InvalidInput("x".into())), RunStatus::Failed);
    }
}
