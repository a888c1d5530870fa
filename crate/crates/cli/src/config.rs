//! Experiment configuration: scenario and room settings plus the sweep grid.

use std::path::{Path, PathBuf};

use aecnr_core::filters::{AlgorithmKind, PfSpeechEstimate, Transport};
use aecnr_core::room::{RoomConfig, ScenarioConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_grid_db: Vec<f64>,
    pub ser_grid_db: Vec<f64>,
    pub layouts: Vec<usize>,
    pub algorithms: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_grid_db: vec![-15.0, 0.0, 15.0],
            ser_grid_db: vec![-15.0, 0.0, 15.0],
            layouts: (1..=5).collect(),
            algorithms: AlgorithmKind::GENERAL
                .iter()
                .map(|k| k.name().to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportSetting {
    TimeDomain,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdScopeSetting {
    WholeSignal,
    SpeechActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostFilterSetting {
    Subtraction,
    InverseNr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessingConfig {
    pub speech_rank: usize,
    pub vad_threshold_db: f64,
    pub transport: TransportSetting,
    pub post_filter_speech: PostFilterSetting,
    pub sd_scope: SdScopeSetting,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self {
            speech_rank: 1,
            vad_threshold_db: 40.0,
            transport: TransportSetting::TimeDomain,
            post_filter_speech: PostFilterSetting::Subtraction,
            sd_scope: SdScopeSetting::WholeSignal,
        }
    }
}

impl ProcessingConfig {
    pub fn transport(&self) -> Transport {
        match self.transport {
            TransportSetting::TimeDomain => Transport::TimeDomain,
            TransportSetting::Spectral => Transport::Spectral,
        }
    }

    pub fn pf_speech_estimate(&self) -> PfSpeechEstimate {
        match self.post_filter_speech {
            PostFilterSetting::Subtraction => PfSpeechEstimate::Subtraction,
            PostFilterSetting::InverseNr => PfSpeechEstimate::InverseNr,
        }
    }
}

/// Everything that determines the output of a sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub room: RoomConfig,
    pub processing: ProcessingConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        Ok(cfg)
    }

    /// Reads a config file. Relative audio paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut cfg =
            Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.scenario.for_each_path(|p| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        });
        Ok(cfg)
    }

    pub fn algorithms(&self) -> Result<Vec<AlgorithmKind>> {
        let kinds = self
            .sweep
            .algorithms
            .iter()
            .map(|a| a.parse::<AlgorithmKind>())
            .collect::<aecnr_core::Result<Vec<_>>>()?;
        if kinds.is_empty() {
            bail!("no algorithms selected");
        }
        Ok(kinds)
    }

    pub fn validate(&self) -> Result<()> {
        self.algorithms()?;
        self.scenario.validate()?;
        self.room.validate()?;
        let s = &self.sweep;
        if s.snr_grid_db.is_empty() || s.ser_grid_db.is_empty() || s.layouts.is_empty() {
            bail!("sweep grids and layouts must be non-empty");
        }
        if let Some(bad) = s.layouts.iter().find(|l| !(1..=5).contains(*l)) {
            bail!("layout {bad} is outside 1..=5");
        }
        for v in s.snr_grid_db.iter().chain(&s.ser_grid_db) {
            if v.is_nan() || *v == f64::NEG_INFINITY {
                bail!("grid value {v} is not a level in dB");
            }
        }
        if self.processing.speech_rank == 0 {
            bail!("speech rank must be at least 1");
        }
        Ok(())
    }

    /// Replaces configured audio files that do not exist with the synthetic
    /// generators.
    pub fn substitute_missing_corpora(&mut self) {
        let sc = &mut self.scenario;
        for slot in [&mut sc.speech_path, &mut sc.noise_path] {
            if let Some(p) = slot {
                if !p.exists() {
                    log::warn!("{} not found; using a synthetic source", p.display());
                    *slot = None;
                }
            }
        }
        if let Some(p) = sc.farend_speech_paths.iter().find(|p| !p.exists()) {
            log::warn!(
                "{} not found; using synthetic far-end speech for every loudspeaker",
                p.display()
            );
            sc.farend_speech_paths.clear();
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing experiment config")
    }

    /// Hex SHA-256 of the serialized config.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

trait ForEachPath {
    fn for_each_path(&mut self, f: impl FnMut(&mut PathBuf));
}

impl ForEachPath for ScenarioConfig {
    fn for_each_path(&mut self, mut f: impl FnMut(&mut PathBuf)) {
        if let Some(p) = self.speech_path.as_mut() {
            f(p);
        }
        if let Some(p) = self.noise_path.as_mut() {
            f(p);
        }
        self.farend_speech_paths.iter_mut().for_each(f);
    }
}

/// Parses a comma-separated list of dB values; `inf` is accepted.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .with_context(|| format!("'{t}' is not a number"))
        })
        .collect()
}
