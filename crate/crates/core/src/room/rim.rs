//! Randomized image-source impulse responses for shoebox rooms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RoomConfig;
use crate::error::{invalid, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Half-width, in samples, of the windowed-sinc fractional delay kernel.
const SINC_HALF_WIDTH: i64 = 4;

pub type Position = [f64; 3];

fn inside(room: &RoomConfig, p: &Position) -> bool {
    p.iter()
        .zip(&room.dimensions)
        .all(|(&x, &d)| x.is_finite() && x >= 0.0 && x <= d)
}

fn mix_seed(mut h: u64, words: &[u64]) -> u64 {
    // splitmix64 over the words
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Seed of the image perturbations for one source/receiver pair.
fn pair_seed(room: &RoomConfig, source: &Position, receiver: &Position) -> u64 {
    let words: Vec<u64> = source.iter().chain(receiver).map(|x| x.to_bits()).collect();
    mix_seed(room.seed, &words)
}

/// Uniform point in a ball of the given radius.
fn ball_offset(rng: &mut ChaCha8Rng, radius: f64) -> Position {
    if radius == 0.0 {
        return [0.0; 3];
    }
    loop {
        let p = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let r2: f64 = p.iter().map(|x| x * x).sum();
        if r2 <= 1.0 {
            return p.map(|x| x * radius);
        }
    }
}

/// Add `amplitude * delta(t - delay)` with a Hann-windowed sinc kernel.
fn add_fractional_impulse(h: &mut [f64], delay: f64, amplitude: f64) {
    let center = delay.round() as i64;
    let frac = delay - center as f64;
    if frac.abs() < 1e-12 {
        if center >= 0 && (center as usize) < h.len() {
            h[center as usize] += amplitude;
        }
        return;
    }
    let w = SINC_HALF_WIDTH as f64;
    for n in center - SINC_HALF_WIDTH..=center + SINC_HALF_WIDTH {
        if n < 0 || n as usize >= h.len() {
            continue;
        }
        let x = n as f64 - delay;
        if x.abs() >= w {
            continue;
        }
        let px = std::f64::consts::PI * x;
        let sinc = px.sin() / px;
        let window = 0.5 * (1.0 + (std::f64::consts::PI * x / w).cos());
        h[n as usize] += amplitude * sinc * window;
    }
}

/// Impulse response from `source` to `receiver`.
///
/// Every image except the direct path is displaced by a uniform random
/// offset of at most `room.random_displacement`; the displacements depend
/// only on `room.seed` and the two positions.
pub fn rim_impulse_response(
    room: &RoomConfig,
    source: &Position,
    receiver: &Position,
) -> Result<Vec<f64>> {
    room.validate()?;
    if !inside(room, source) {
        return Err(invalid(format!("source {source:?} is outside the room")));
    }
    if !inside(room, receiver) {
        return Err(invalid(format!("receiver {receiver:?} is outside the room")));
    }
    let fs = room.sample_rate;
    let len = room.ir_length;
    let mut h = vec![0.0; len];
    let max_distance =
        (len as f64 + SINC_HALF_WIDTH as f64) / fs * SPEED_OF_SOUND + room.random_displacement;
    let order: [i64; 3] =
        std::array::from_fn(|a| (max_distance / (2.0 * room.dimensions[a])).ceil() as i64 + 1);
    let beta = room.reflection_coefficient;
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(room, source, receiver));

    for nx in -order[0]..=order[0] {
        for ny in -order[1]..=order[1] {
            for nz in -order[2]..=order[2] {
                let n = [nx, ny, nz];
                for q in 0..8u32 {
                    let qa = [(q & 1) as i64, ((q >> 1) & 1) as i64, ((q >> 2) & 1) as i64];
                    let mut image = [0.0; 3];
                    let mut reflections = 0i64;
                    for a in 0..3 {
                        image[a] = (1 - 2 * qa[a]) as f64 * source[a]
                            + 2.0 * n[a] as f64 * room.dimensions[a];
                        reflections += (n[a] - qa[a]).abs() + n[a].abs();
                    }
                    // The perturbation stream is consumed for every image so that
                    // results do not depend on which images survive truncation.
                    let offset = ball_offset(&mut rng, room.random_displacement);
                    if reflections > 0 {
                        for a in 0..3 {
                            image[a] += offset[a];
                        }
                    }
                    let d = image
                        .iter()
                        .zip(receiver)
                        .map(|(p, r)| (p - r).powi(2))
                        .sum::<f64>()
                        .sqrt()
                        .max(1e-3);
                    let delay = d / SPEED_OF_SOUND * fs;
                    if delay >= len as f64 + SINC_HALF_WIDTH as f64 {
                        continue;
                    }
                    let gain = if reflections == 0 {
                        1.0
                    } else if beta == 0.0 {
                        continue;
                    } else {
                        beta.powi(reflections as i32)
                    };
                    add_fractional_impulse(&mut h, delay, gain / (4.0 * std::f64::consts::PI * d));
                }
            }
        }
    }
    Ok(h)
}

/// Schroeder backward-integrated energy decay curve in dB, normalized to 0 dB
/// at the first sample.
pub fn energy_decay_curve(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|x| {
            acc += x * x;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| {
            if total > 0.0 && e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Reverberation time from the Schroeder curve: least-squares slope between
/// -5 dB and -25 dB, extrapolated to 60 dB of decay.
pub fn schroeder_t60(h: &[f64], sample_rate: f64) -> Result<f64> {
    let edc = energy_decay_curve(h);
    let points: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &e)| (-25.0..=-5.0).contains(&e))
        .map(|(i, &e)| (i as f64 / sample_rate, e))
        .collect();
    if points.len() < 2 {
        return Err(invalid("impulse response too short to measure a 20 dB decay"));
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let me = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(invalid("energy decay curve does not decay"));
    }
    Ok(-60.0 / slope)
}

/// Spatially averaged reverberation time of a room.
///
/// Source and receiver pairs are drawn uniformly at least 1 m from every
/// wall and at least `2 sqrt(V / (c T))` apart, with `T = nominal_t60`.
/// Each response is `duration` seconds long.
pub fn average_t60(
    room: &RoomConfig,
    nominal_t60: f64,
    pairs: usize,
    duration: f64,
    seed: u64,
) -> Result<f64> {
    room.validate()?;
    let volume: f64 = room.dimensions.iter().product();
    let min_distance = 2.0 * (volume / (SPEED_OF_SOUND * nominal_t60)).sqrt();
    let probe = RoomConfig {
        ir_length: (duration * room.sample_rate).round() as usize,
        ..room.clone()
    };
    let margin = 1.0;
    if room.dimensions.iter().any(|&d| d <= 2.0 * margin) {
        return Err(invalid("room too small for measurement positions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| -> Position {
        std::array::from_fn(|a| rng.random_range(margin..room.dimensions[a] - margin))
    };
    let mut total = 0.0;
    let mut found = 0;
    let mut attempts = 0;
    while found < pairs {
        attempts += 1;
        if attempts > 1000 * pairs.max(1) {
            return Err(invalid("no source/receiver pairs satisfy the minimum distance"));
        }
        let a = point(&mut rng);
        let b = point(&mut rng);
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if d < min_distance {
            continue;
        }
        let h = rim_impulse_response(&probe, &a, &b)?;
        total += schroeder_t60(&h, room.sample_rate)?;
        found += 1;
    }
    Ok(total / pairs as f64)
}
