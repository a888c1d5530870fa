//! Calibrated multichannel mixtures with every additive component kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::signals::{babble, gated_white, speech_like, white, ActivitySchedule};
use super::{
    place_sources, read_wav_mono, rim_impulse_response, EchoPathModel, RoomConfig,
    ScenarioConfig, SignalKind, SourcePositions,
};
use crate::error::{invalid, Error, Result};

/// Number of talkers summed into synthetic babble.
const BABBLE_TALKERS: usize = 6;

/// Gains applied to the unit-power source signals.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingGains {
    pub speech: f64,
    pub noise: f64,
    /// Far-end speech gain per loudspeaker.
    pub farend_speech: Vec<f64>,
    /// Far-end noise gain per loudspeaker.
    pub farend_noise: Vec<f64>,
}

/// Time-domain ground truth of one scenario. Multichannel fields are indexed
/// `[channel][sample]`; `echo_irs` is indexed `[mic][loudspeaker]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub sample_rate: f64,
    pub reference_mic: usize,
    pub s: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub e_s: Vec<Vec<f64>>,
    pub e_n: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub l_s: Vec<Vec<f64>>,
    pub l_n: Vec<Vec<f64>>,
    pub speech_irs: Vec<Vec<f64>>,
    pub noise_irs: Vec<Vec<f64>>,
    pub echo_irs: Vec<Vec<Vec<f64>>>,
    pub positions: SourcePositions,
    pub gains: MixingGains,
}

impl ScenarioBundle {
    pub fn mics(&self) -> usize {
        self.m.len()
    }

    pub fn loudspeakers(&self) -> usize {
        self.l.len()
    }

    pub fn len(&self) -> usize {
        self.m.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean squared value.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// `h * x` truncated to `x.len()` samples.
pub fn convolve_truncated(h: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let taps: Vec<(usize, f64)> = h
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .collect();
    for (k, hk) in taps {
        if k >= x.len() {
            break;
        }
        for (yi, xi) in y[k..].iter_mut().zip(x) {
            *yi += hk * xi;
        }
    }
    y
}

/// `e_i = sum_j f_i^j * l_j` for `irs[i][j]`.
pub fn apply_linear_echo_path(irs: &[Vec<Vec<f64>>], l: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let len = l.first().map_or(0, Vec::len);
    if l.iter().any(|c| c.len() != len) {
        return Err(invalid("loudspeaker signals have different lengths"));
    }
    irs.iter()
        .map(|row| {
            if row.len() != l.len() {
                return Err(invalid(format!(
                    "echo path has {} loudspeaker responses, signal has {} channels",
                    row.len(),
                    l.len()
                )));
            }
            let mut e = vec![0.0; len];
            for (h, lj) in row.iter().zip(l) {
                for (a, b) in e.iter_mut().zip(convolve_truncated(h, lj)) {
                    *a += b;
                }
            }
            Ok(e)
        })
        .collect()
}

fn load_source(path: &std::path::Path, fs: f64, len: usize) -> Result<Vec<f64>> {
    let (x, rate) = read_wav_mono(path)?;
    let x = if (rate - fs).abs() > 1e-9 {
        super::resample(&x, rate, fs)?
    } else {
        x
    };
    if x.len() < len {
        return Err(invalid(format!(
            "{} holds {} samples at {fs} Hz, {len} needed",
            path.display(),
            x.len()
        )));
    }
    Ok(x[..len].to_vec())
}

fn generate(
    kind: SignalKind,
    schedule: &ActivitySchedule,
    fs: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    match kind {
        SignalKind::SpeechLike => speech_like(schedule, fs, rng),
        SignalKind::GatedWhite => gated_white(schedule, fs, rng),
        SignalKind::White => white(schedule.len, rng),
        SignalKind::Babble => babble(schedule.len, fs, BABBLE_TALKERS, rng),
    }
}

fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn scale(x: &[f64], g: f64) -> Vec<f64> {
    x.iter().map(|v| v * g).collect()
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn degenerate(what: &str) -> Error {
    Error::DegenerateScenario(format!("{what} has zero power at the reference microphone"))
}

fn flat_echo_gains(m: usize, l: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<f64>>> {
    (0..m)
        .map(|_| {
            (0..l)
                .map(|_| {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    vec![sign * rng.random_range(0.3..1.0)]
                })
                .collect()
        })
        .collect()
}

/// Builds and calibrates a scenario.
///
/// Unit-power sources are scaled so that, at the reference microphone,
/// the far-end speech/noise ratio holds in every loudspeaker, the echo of
/// loudspeaker 1 exceeds every other loudspeaker's echo by the inter-echo
/// ratio, and the SNR and SER equal their requested values. Powers are
/// means over the whole signal.
pub fn synthesize_scenario(config: &ScenarioConfig, room: &RoomConfig) -> Result<ScenarioBundle> {
    config.validate()?;
    room.validate()?;
    let fs = room.sample_rate;
    let len = (config.duration_seconds * fs).round() as usize;
    if len == 0 {
        return Err(invalid("scenario has no samples"));
    }
    let m_count = config.mics();
    let l_count = config.loudspeakers;
    let r = config.reference_mic;
    let positions = place_sources(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let near_schedule = ActivitySchedule::near_end(len, fs, &mut rng);
    let far_schedule = ActivitySchedule::far_end(len, fs, &mut rng);
    let always = ActivitySchedule::always(len);

    let speech_src = match &config.speech_path {
        Some(p) => load_source(p, fs, len)?,
        None => generate(config.speech_kind, &near_schedule, fs, &mut rng),
    };
    let noise_src = match &config.noise_path {
        Some(p) => load_source(p, fs, len)?,
        None => generate(config.noise_kind, &always, fs, &mut rng),
    };
    let mut farend_speech_src = Vec::with_capacity(l_count);
    let mut farend_noise_src = Vec::with_capacity(l_count);
    for j in 0..l_count {
        farend_speech_src.push(match config.farend_speech_paths.get(j) {
            Some(p) => load_source(p, fs, len)?,
            None => generate(config.farend_speech_kind, &far_schedule, fs, &mut rng),
        });
        farend_noise_src.push(white(len, &mut rng));
    }

    let rir = |src: &[f64; 3], mic: &[f64; 3]| rim_impulse_response(room, src, mic);
    let speech_irs = config
        .mic_positions
        .iter()
        .map(|mic| rir(&positions.speech, mic))
        .collect::<Result<Vec<_>>>()?;
    let noise_irs = config
        .mic_positions
        .iter()
        .map(|mic| rir(&positions.noise, mic))
        .collect::<Result<Vec<_>>>()?;
    let echo_irs = match config.echo_path_model {
        EchoPathModel::Room => config
            .mic_positions
            .iter()
            .map(|mic| {
                positions
                    .loudspeakers
                    .iter()
                    .map(|ls| rir(ls, mic))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
        EchoPathModel::FlatGains => flat_echo_gains(m_count, l_count, &mut rng),
    };

    // far-end noise relative to speech inside each loudspeaker
    let fn_gain = if config.farend_speech_noise_ratio_db == f64::INFINITY {
        0.0
    } else {
        1.0 / db_to_power(config.farend_speech_noise_ratio_db).sqrt()
    };
    // per-loudspeaker echo contributions at every mic, before loudspeaker gains
    let mut echo_s_parts = vec![vec![Vec::new(); l_count]; m_count];
    let mut echo_n_parts = vec![vec![Vec::new(); l_count]; m_count];
    for i in 0..m_count {
        for j in 0..l_count {
            echo_s_parts[i][j] = convolve_truncated(&echo_irs[i][j], &farend_speech_src[j]);
            echo_n_parts[i][j] =
                scale(&convolve_truncated(&echo_irs[i][j], &farend_noise_src[j]), fn_gain);
        }
    }
    let ls_echo_power: Vec<f64> = (0..l_count)
        .map(|j| power(&sum(&echo_s_parts[r][j], &echo_n_parts[r][j])))
        .collect();
    let ier = db_to_power(config.inter_echo_power_ratio_db);
    let mut ls_gain = vec![0.0; l_count];
    for j in 0..l_count {
        if ls_echo_power[j] == 0.0 {
            return Err(degenerate(&format!("echo of loudspeaker {}", j + 1)));
        }
        let target = if j == 0 { 1.0 } else { 1.0 / ier };
        ls_gain[j] = (target / ls_echo_power[j]).sqrt();
    }

    let s_raw: Vec<Vec<f64>> = speech_irs
        .iter()
        .map(|h| convolve_truncated(h, &speech_src))
        .collect();
    let n_raw: Vec<Vec<f64>> = noise_irs
        .iter()
        .map(|h| convolve_truncated(h, &noise_src))
        .collect();
    let e_raw_ref = (0..l_count).fold(vec![0.0; len], |acc, j| {
        sum(
            &acc,
            &scale(&sum(&echo_s_parts[r][j], &echo_n_parts[r][j]), ls_gain[j]),
        )
    });

    let ps = power(&s_raw[r]);
    if ps == 0.0 {
        return Err(degenerate("desired speech"));
    }
    let speech_gain = 1.0 / ps.sqrt();
    let noise_gain = if config.snr_in_db == f64::INFINITY {
        0.0
    } else {
        let pn = power(&n_raw[r]);
        if pn == 0.0 {
            return Err(degenerate("near-end noise"));
        }
        (1.0 / db_to_power(config.snr_in_db) / pn).sqrt()
    };
    let echo_gain = if config.ser_in_db == f64::INFINITY {
        0.0
    } else {
        let pe = power(&e_raw_ref);
        if pe == 0.0 {
            return Err(degenerate("echo"));
        }
        (1.0 / db_to_power(config.ser_in_db) / pe).sqrt()
    };

    let s: Vec<Vec<f64>> = s_raw.iter().map(|x| scale(x, speech_gain)).collect();
    let n: Vec<Vec<f64>> = n_raw.iter().map(|x| scale(x, noise_gain)).collect();
    let farend_speech: Vec<f64> = ls_gain.iter().map(|g| g * echo_gain).collect();
    let farend_noise: Vec<f64> = farend_speech.iter().map(|g| g * fn_gain).collect();
    let l_s: Vec<Vec<f64>> = (0..l_count)
        .map(|j| scale(&farend_speech_src[j], farend_speech[j]))
        .collect();
    let l_n: Vec<Vec<f64>> = (0..l_count)
        .map(|j| scale(&farend_noise_src[j], farend_speech[j] * fn_gain))
        .collect();
    let l: Vec<Vec<f64>> = l_s.iter().zip(&l_n).map(|(a, b)| sum(a, b)).collect();
    let mut e_s = vec![vec![0.0; len]; m_count];
    let mut e_n = vec![vec![0.0; len]; m_count];
    for i in 0..m_count {
        for j in 0..l_count {
            let g = farend_speech[j];
            for (acc, v) in e_s[i].iter_mut().zip(&echo_s_parts[i][j]) {
                *acc += g * v;
            }
            for (acc, v) in e_n[i].iter_mut().zip(&echo_n_parts[i][j]) {
                *acc += g * v;
            }
        }
    }
    let e: Vec<Vec<f64>> = e_s.iter().zip(&e_n).map(|(a, b)| sum(a, b)).collect();
    let m: Vec<Vec<f64>> = (0..m_count)
        .map(|i| {
            s[i].iter()
                .zip(&e[i])
                .zip(&n[i])
                .map(|((a, b), c)| a + b + c)
                .collect()
        })
        .collect();

    Ok(ScenarioBundle {
        sample_rate: fs,
        reference_mic: r,
        s,
        n,
        e,
        e_s,
        e_n,
        m,
        l,
        l_s,
        l_n,
        speech_irs,
        noise_irs,
        echo_irs,
        positions,
        gains: MixingGains {
            speech: speech_gain,
            noise: noise_gain,
            farend_speech,
            farend_noise,
        },
    })
}
