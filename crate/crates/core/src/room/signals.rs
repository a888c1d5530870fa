//! Corpus-free source signals.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Ramp length at both ends of every active interval.
const RAMP_SECONDS: f64 = 0.01;

/// Active sample intervals `[start, end)` of a gated source.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySchedule {
    pub intervals: Vec<(usize, usize)>,
    pub len: usize,
}

fn seconds(s: f64, fs: f64) -> usize {
    (s * fs).round() as usize
}

impl ActivitySchedule {
    pub fn always(len: usize) -> Self {
        Self {
            intervals: vec![(0, len)],
            len,
        }
    }

    /// Sentences separated by short pauses for 5 s, then 5 s of silence,
    /// repeated.
    pub fn near_end(len: usize, fs: f64, rng: &mut impl Rng) -> Self {
        let mut intervals = Vec::new();
        let period = seconds(10.0, fs);
        let block = seconds(5.0, fs);
        let mut cycle = 0;
        while cycle < len {
            let end_block = (cycle + block).min(len);
            let mut t = cycle;
            while t < end_block {
                let dur = seconds(rng.random_range(1.5..2.5), fs);
                let end = (t + dur).min(end_block);
                if end > t + seconds(0.3, fs) {
                    intervals.push((t, end));
                }
                t = end + seconds(rng.random_range(0.2..0.5), fs);
            }
            cycle += period;
        }
        Self { intervals, len }
    }

    /// Sentences with pauses of roughly one second.
    pub fn far_end(len: usize, fs: f64, rng: &mut impl Rng) -> Self {
        let mut intervals = Vec::new();
        let mut t = seconds(rng.random_range(0.0..0.5), fs);
        while t < len {
            let dur = seconds(rng.random_range(1.2..2.8), fs);
            let end = (t + dur).min(len);
            if end > t + seconds(0.3, fs) {
                intervals.push((t, end));
            }
            t = end + seconds(rng.random_range(0.6..1.8), fs);
        }
        Self { intervals, len }
    }

    /// Per-sample gain: 1 inside intervals with raised-cosine ramps, 0 outside.
    pub fn gain(&self, fs: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.len];
        let ramp = seconds(RAMP_SECONDS, fs).max(1);
        for &(a, b) in &self.intervals {
            let b = b.min(self.len);
            let n = b.saturating_sub(a);
            let r = ramp.min(n / 2).max(1);
            for i in 0..n {
                let edge = i.min(n - 1 - i);
                g[a + i] = if edge >= r {
                    1.0
                } else {
                    0.5 - 0.5 * (std::f64::consts::PI * (edge as f64 + 0.5) / r as f64).cos()
                };
            }
        }
        g
    }
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if p > 0.0 {
        let k = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= k);
    }
    x
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Formant-colored noise with a syllable-rate envelope for `[start, end)`.
fn voiced_segment(out: &mut [f64], start: usize, end: usize, fs: f64, rng: &mut impl Rng) {
    let formants = [
        (rng.random_range(300.0..900.0), rng.random_range(80.0..160.0), 1.0),
        (rng.random_range(900.0..2300.0), rng.random_range(100.0..200.0), 0.5),
        (rng.random_range(2300.0..3500.0), rng.random_range(150.0..300.0), 0.25),
    ];
    let coeffs: Vec<(f64, f64, f64)> = formants
        .iter()
        .map(|&(f, bw, g)| {
            let r = (-std::f64::consts::PI * bw / fs).exp();
            let theta = 2.0 * std::f64::consts::PI * f / fs;
            // unity gain at the resonance
            let norm = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
            (2.0 * r * theta.cos(), -r * r, g * norm)
        })
        .collect();
    let rate = rng.random_range(3.0..5.0);
    let phase = rng.random_range(0.0..std::f64::consts::PI);
    let mut state = vec![(0.0, 0.0); coeffs.len()];
    for (i, o) in out[start..end].iter_mut().enumerate() {
        let e = gaussian(rng);
        let mut y = 0.05 * e;
        for (s, &(a1, a2, g)) in state.iter_mut().zip(&coeffs) {
            let v = e + a1 * s.0 + a2 * s.1;
            s.1 = s.0;
            s.0 = v;
            y += g * v;
        }
        let t = i as f64 / fs;
        let env = 0.25 + 0.75 * (std::f64::consts::PI * rate * t + phase).sin().powi(2);
        *o = y * env;
    }
}

/// Speech-like signal active on `schedule`, normalized to unit power.
pub fn speech_like(schedule: &ActivitySchedule, fs: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut x = vec![0.0; schedule.len];
    for &(a, b) in &schedule.intervals {
        voiced_segment(&mut x, a, b.min(schedule.len), fs, rng);
    }
    let g = schedule.gain(fs);
    x.iter_mut().zip(&g).for_each(|(v, g)| *v *= g);
    normalize(x)
}

pub fn white(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    normalize((0..len).map(|_| gaussian(rng)).collect())
}

/// White noise active on `schedule`, unit power over the whole signal.
pub fn gated_white(schedule: &ActivitySchedule, fs: f64, rng: &mut impl Rng) -> Vec<f64> {
    let g = schedule.gain(fs);
    normalize(g.iter().map(|g| g * gaussian(rng)).collect())
}

/// Sum of `talkers` ungated speech-like streams whose formants change every
/// 1.5 s.
pub fn babble(len: usize, fs: f64, talkers: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut sum = vec![0.0; len];
    let chunk = seconds(1.5, fs).max(1);
    for _ in 0..talkers.max(1) {
        let mut x = vec![0.0; len];
        let mut t = 0;
        while t < len {
            let end = (t + chunk).min(len);
            voiced_segment(&mut x, t, end, fs, rng);
            t = end;
        }
        for (s, v) in sum.iter_mut().zip(normalize(x)) {
            *s += v;
        }
    }
    normalize(sum)
}
