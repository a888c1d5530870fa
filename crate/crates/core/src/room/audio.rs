//! WAV input/output and sample-rate conversion.

use std::path::Path;

use rubato::audioadapter_buffers::direct::InterleavedSlice;
use rubato::{Async, FixedAsync, Resampler, SincInterpolationParameters, WindowFunction};

use crate::error::{invalid, Error, Result};

fn audio_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads a mono PCM or float WAV file as `(samples in [-1, 1], sample rate)`.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f64>, f64)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_error(
            path,
            format!("expected a mono file, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let full_scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| audio_error(path, e))?;
    Ok((samples, spec.sample_rate as f64))
}

/// Writes `channels x samples` as 32-bit float WAV.
pub fn write_wav(path: &Path, channels: &[Vec<f64>], sample_rate: f64) -> Result<()> {
    if channels.is_empty() {
        return Err(invalid("no channels to write"));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(invalid("channels have different lengths"));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| audio_error(path, e))?;
    for t in 0..len {
        for c in channels {
            writer
                .write_sample(c[t] as f32)
                .map_err(|e| audio_error(path, e))?;
        }
    }
    writer.finalize().map_err(|e| audio_error(path, e))
}

/// Band-limited sinc resampling of a whole clip from `from` Hz to `to` Hz.
pub fn resample(x: &[f64], from: f64, to: f64) -> Result<Vec<f64>> {
    if !(from > 0.0 && to > 0.0) {
        return Err(invalid("sample rates must be positive"));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let params = SincInterpolationParameters::new(256, WindowFunction::BlackmanHarris2);
    let mut resampler = Async::<f64>::new_sinc(to / from, 1.0, &params, 1024, 1, FixedAsync::Input)
        .map_err(|e| invalid(format!("resampler: {e}")))?;
    let input = InterleavedSlice::new(x, 1, x.len()).map_err(|e| invalid(format!("{e}")))?;
    let out = resampler
        .process_all(&input, x.len(), None)
        .map_err(|e| invalid(format!("resampling failed: {e}")))?;
    Ok(out.take_data())
}
