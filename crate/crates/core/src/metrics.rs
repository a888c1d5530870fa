//! Intelligibility-weighted SNR, SER and speech-distortion measures over
//! one-third-octave bands.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::filters::Components;

const THIRD_OCTAVE_TABLE: &str = include_str!("../data/third_octave_importance.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center_hz: f64,
    pub lower_hz: f64,
    pub upper_hz: f64,
    pub importance: f64,
}

/// Ordered, non-overlapping bands with importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    bands: Vec<Band>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    version: u32,
    band: Vec<TableRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRow {
    center_hz: f64,
    importance: f64,
}

impl BandSpec {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(invalid("band table is empty"));
        }
        for b in &bands {
            if !(b.lower_hz >= 0.0 && b.lower_hz < b.upper_hz) || !(b.importance >= 0.0) {
                return Err(invalid(format!("invalid band {b:?}")));
            }
        }
        if bands.windows(2).any(|w| w[1].lower_hz < w[0].upper_hz) {
            return Err(invalid("bands must be ordered and non-overlapping"));
        }
        Ok(Self { bands })
    }

    /// Parses a table of `[[band]]` entries with nominal `center_hz` and
    /// `importance`. Edges lie a twentieth of a decade either side of the
    /// exact midband frequency `1000 * 10^(n / 10)`, so adjacent bands meet.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TableFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if file.version != 1 {
            return Err(Error::Config(format!(
                "unsupported band table version {}",
                file.version
            )));
        }
        let edge = 10f64.powf(0.05);
        let bands = file
            .band
            .into_iter()
            .map(|r| {
                if !(r.center_hz > 0.0) {
                    return Err(invalid(format!("band center {} Hz", r.center_hz)));
                }
                let index = (10.0 * (r.center_hz / 1000.0).log10()).round();
                let exact = 1000.0 * 10f64.powf(index / 10.0);
                Ok(Band {
                    center_hz: r.center_hz,
                    lower_hz: exact / edge,
                    upper_hz: exact * edge,
                    importance: r.importance,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(bands)
    }

    /// The 18 bands from 160 Hz to 8 kHz with speech importance weights.
    pub fn third_octave() -> Self {
        Self::from_toml_str(THIRD_OCTAVE_TABLE).expect("embedded band table is valid")
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}

/// Mean power per sample of `signal` inside each band, from an FFT mask over
/// the whole signal (a zero-phase band-pass).
pub fn band_powers(signal: &[f64], sample_rate: f64, bands: &BandSpec) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return vec![0.0; bands.len()];
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = sample_rate / n as f64;
    let scale = 1.0 / (n as f64 * n as f64);
    bands
        .bands
        .iter()
        .map(|b| {
            let lo = (b.lower_hz / df).ceil() as usize;
            let hi = ((b.upper_hz / df).ceil() as usize).min(n / 2 + 1);
            (lo..hi)
                .map(|k| {
                    // bins other than DC and Nyquist stand for two conjugate bins
                    let twice = k != 0 && 2 * k != n;
                    buf[k].norm_sqr() * if twice { 2.0 } else { 1.0 }
                })
                .sum::<f64>()
                * scale
        })
        .collect()
}

/// Per-band input and output ratios in dB.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMetrics {
    pub center_hz: f64,
    pub importance: f64,
    pub snr_in_db: f64,
    pub snr_out_db: f64,
    pub ser_in_db: f64,
    pub ser_out_db: f64,
    pub sd_db: f64,
}

/// Weighted improvements; a measure is `None` when every band has zero
/// power in one of its terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub delta_snr_db: Option<f64>,
    pub delta_ser_db: Option<f64>,
    pub sd_db: Option<f64>,
    pub bands: Vec<BandMetrics>,
}

/// Which samples enter the speech-distortion measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdScope<'a> {
    WholeSignal,
    /// Only samples where the mask is set.
    Masked(&'a [bool]),
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

fn usable(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Importance-weighted sum over bands where `value` is defined, with the
/// weights renormalized over those bands.
fn weighted(name: &str, bands: &BandSpec, value: impl Fn(usize) -> Option<f64>) -> Option<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut skipped = Vec::new();
    for (i, b) in bands.bands.iter().enumerate() {
        match value(i) {
            Some(v) => {
                total += b.importance * v;
                weight += b.importance;
            }
            None => skipped.push(b.center_hz),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{name}: bands {skipped:?} Hz have zero power and are excluded");
    }
    (weight > 0.0).then(|| total / weight)
}

fn masked(x: &[f64], mask: &[bool]) -> Vec<f64> {
    x.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect()
}

/// SNR and SER improvements and speech distortion between input and output
/// components of the reference channel.
pub fn improvement_metrics(
    input: &Components<Vec<f64>>,
    output: &Components<Vec<f64>>,
    sample_rate: f64,
    bands: &BandSpec,
    sd_scope: SdScope<'_>,
) -> Result<MetricsReport> {
    let len = input.speech.len();
    for c in [input, output] {
        for x in [&c.speech, &c.noise, &c.echo_speech, &c.echo_noise] {
            if x.len() != len {
                return Err(mismatch("component signals differ in length"));
            }
        }
    }
    if let SdScope::Masked(mask) = sd_scope {
        if mask.len() != len {
            return Err(mismatch(format!(
                "speech mask has {} samples, signals have {len}",
                mask.len()
            )));
        }
    }
    let p = |x: &[f64]| band_powers(x, sample_rate, bands);
    let (s_in, n_in, e_in) = (p(&input.speech), p(&input.noise), p(&input.echo()));
    let (s_out, n_out, e_out) = (p(&output.speech), p(&output.noise), p(&output.echo()));
    let (sd_in, sd_out) = match sd_scope {
        SdScope::WholeSignal => (s_in.clone(), s_out.clone()),
        SdScope::Masked(mask) => (p(&masked(&input.speech, mask)), p(&masked(&output.speech, mask))),
    };

    let ratio_change = |a_in: &[f64], b_in: &[f64], a_out: &[f64], b_out: &[f64], i: usize| {
        [a_in[i], b_in[i], a_out[i], b_out[i]]
            .iter()
            .all(|&v| usable(v))
            .then(|| db(a_out[i] / b_out[i]) - db(a_in[i] / b_in[i]))
    };
    let delta_snr = weighted("SNR", bands, |i| ratio_change(&s_in, &n_in, &s_out, &n_out, i));
    let delta_ser = weighted("SER", bands, |i| ratio_change(&s_in, &e_in, &s_out, &e_out, i));
    let sd = weighted("SD", bands, |i| {
        (usable(sd_in[i]) && usable(sd_out[i])).then(|| db(sd_out[i] / sd_in[i]))
    });

    let per_band = bands
        .bands
        .iter()
        .enumerate()
        .map(|(i, b)| BandMetrics {
            center_hz: b.center_hz,
            importance: b.importance,
            snr_in_db: db(s_in[i] / n_in[i]),
            snr_out_db: db(s_out[i] / n_out[i]),
            ser_in_db: db(s_in[i] / e_in[i]),
            ser_out_db: db(s_out[i] / e_out[i]),
            sd_db: db(sd_out[i] / sd_in[i]),
        })
        .collect();
    Ok(MetricsReport {
        delta_snr_db: delta_snr,
        delta_ser_db: delta_ser,
        sd_db: sd,
        bands: per_band,
    })
}

/// Sample mask of the frames flagged in `active`, for frames of
/// `window` samples advancing by `hop`.
pub fn frame_mask(active: &[bool], window: usize, hop: usize, len: usize) -> Vec<bool> {
    let mut mask = vec![false; len];
    for (k, _) in active.iter().enumerate().filter(|(_, &a)| a) {
        let start = k * hop;
        mask[start.min(len)..(start + window).min(len)].fill(true);
    }
    mask
}
