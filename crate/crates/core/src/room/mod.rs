//! Acoustic scenario generation: image-method room responses, source layouts,
//! source signals and calibrated multichannel mixtures.

mod audio;
mod placement;
mod rim;
mod scenario;
mod signals;

pub use audio::{read_wav_mono, resample, write_wav};
pub use placement::{place_sources, SourcePositions};
pub use rim::{
    average_t60, energy_decay_curve, rim_impulse_response, schroeder_t60, Position, SPEED_OF_SOUND,
};
pub use scenario::{
    apply_linear_echo_path, convolve_truncated, power, synthesize_scenario, MixingGains,
    ScenarioBundle,
};
pub use signals::{babble, gated_white, speech_like, white, ActivitySchedule};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomConfig {
    /// Room size in meters along x, y, z.
    pub dimensions: [f64; 3],
    /// Pressure reflection coefficient shared by all walls.
    pub reflection_coefficient: f64,
    pub sample_rate: f64,
    /// Impulse response length in samples.
    pub ir_length: usize,
    /// Radius of the random image displacement in meters.
    pub random_displacement: f64,
    pub seed: u64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            dimensions: [5.0, 5.0, 3.0],
            reflection_coefficient: 0.15,
            sample_rate: 16_000.0,
            ir_length: 128,
            random_displacement: 0.13,
            seed: 1,
        }
    }
}

impl RoomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(invalid(format!(
                "room dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        if !(0.0..1.0).contains(&self.reflection_coefficient) {
            return Err(invalid(format!(
                "reflection coefficient must lie in [0, 1), got {}",
                self.reflection_coefficient
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(invalid("sample rate must be positive"));
        }
        if self.ir_length == 0 {
            return Err(invalid("impulse response length must be at least 1"));
        }
        if !(self.random_displacement >= 0.0) {
            return Err(invalid("random displacement must be non-negative"));
        }
        Ok(())
    }
}

/// Source signal family used when no audio file is configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    /// Modulated, spectrally colored noise with sentence gating.
    SpeechLike,
    /// White noise switched on and off with the same sentence gating.
    GatedWhite,
    /// Stationary white noise.
    White,
    /// Sum of several ungated speech-like talkers.
    Babble,
}

/// How echo paths from loudspeakers to microphones are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EchoPathModel {
    /// Image-method room responses, like every other path.
    Room,
    /// Single-tap random gains, an exactly linear per-bin map in the STFT domain.
    FlatGains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mic_positions: Vec<Position>,
    pub loudspeakers: usize,
    pub source_circle_radius: f64,
    /// Layout index in `1..=5`.
    pub layout: usize,
    /// Reference-microphone SNR; `inf` disables the near-end noise.
    pub snr_in_db: f64,
    /// Reference-microphone signal-to-echo ratio; `inf` disables the echo.
    pub ser_in_db: f64,
    /// Far-end speech to far-end noise power ratio in each loudspeaker;
    /// `inf` disables the far-end noise.
    pub farend_speech_noise_ratio_db: f64,
    /// Echo power of loudspeaker 1 relative to each other loudspeaker at the
    /// reference microphone.
    pub inter_echo_power_ratio_db: f64,
    pub duration_seconds: f64,
    /// Zero-based index of the reference microphone.
    pub reference_mic: usize,
    pub seed: u64,
    pub speech_path: Option<PathBuf>,
    pub noise_path: Option<PathBuf>,
    /// One file per loudspeaker.
    pub farend_speech_paths: Vec<PathBuf>,
    pub speech_kind: SignalKind,
    pub noise_kind: SignalKind,
    pub farend_speech_kind: SignalKind,
    pub echo_path_model: EchoPathModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mic_positions: vec![[2.0, 1.9, 1.0], [2.0, 1.8, 1.0]],
            loudspeakers: 2,
            source_circle_radius: 0.2,
            layout: 1,
            snr_in_db: 0.0,
            ser_in_db: 0.0,
            farend_speech_noise_ratio_db: 0.0,
            inter_echo_power_ratio_db: 0.0,
            duration_seconds: 30.0,
            reference_mic: 0,
            seed: 1,
            speech_path: None,
            noise_path: None,
            farend_speech_paths: Vec::new(),
            speech_kind: SignalKind::SpeechLike,
            noise_kind: SignalKind::Babble,
            farend_speech_kind: SignalKind::SpeechLike,
            echo_path_model: EchoPathModel::Room,
        }
    }
}

impl ScenarioConfig {
    pub fn mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn mean_mic_position(&self) -> Position {
        let m = self.mic_positions.len().max(1) as f64;
        let mut p = [0.0; 3];
        for q in &self.mic_positions {
            for a in 0..3 {
                p[a] += q[a] / m;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.is_empty() {
            return Err(invalid("at least one microphone is required"));
        }
        if self.loudspeakers == 0 {
            return Err(invalid("at least one loudspeaker is required"));
        }
        if !(1..=5).contains(&self.layout) {
            return Err(invalid(format!("layout must be in 1..=5, got {}", self.layout)));
        }
        if !(self.duration_seconds > 0.0) || !self.duration_seconds.is_finite() {
            return Err(invalid("duration must be positive"));
        }
        if !(self.source_circle_radius >= 0.0) {
            return Err(invalid("source circle radius must be non-negative"));
        }
        if self.reference_mic >= self.mic_positions.len() {
            return Err(invalid(format!(
                "reference microphone {} does not exist",
                self.reference_mic
            )));
        }
        for (name, v) in [
            ("snr_in_db", self.snr_in_db),
            ("ser_in_db", self.ser_in_db),
            ("farend_speech_noise_ratio_db", self.farend_speech_noise_ratio_db),
        ] {
            if v.is_nan() || v == f64::NEG_INFINITY {
                return Err(invalid(format!("{name} must be a number or +inf")));
            }
        }
        if !self.inter_echo_power_ratio_db.is_finite() {
            return Err(invalid("inter_echo_power_ratio_db must be finite"));
        }
        if !self.farend_speech_paths.is_empty()
            && self.farend_speech_paths.len() != self.loudspeakers
        {
            return Err(invalid(format!(
                "{} far-end files given for {} loudspeakers",
                self.farend_speech_paths.len(),
                self.loudspeakers
            )));
        }
        Ok(())
    }
}

/// Scenario and room settings as stored in a TOML file: scenario keys at the
/// top level and room keys under `[room]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    pub room: RoomConfig,
}

impl ExperimentFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let parsed: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        parsed.scenario.validate()?;
        parsed.room.validate()?;
        Ok(parsed)
    }

    /// Loads a config file; relative audio paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.scenario.speech_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.scenario.noise_path.as_mut() {
            resolve(p);
        }
        cfg.scenario.farend_speech_paths.iter_mut().for_each(resolve);
        Ok(cfg)
    }
}
