//! Square-root Hann analysis/synthesis filterbank.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub sample_rate: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 512,
            hop: 256,
            sample_rate: 16_000.0,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    pub fn frame_count(&self, signal_len: usize) -> usize {
        if signal_len < self.window_length {
            0
        } else {
            (signal_len - self.window_length) / self.hop + 1
        }
    }

    /// Center frequency of bin `f` in Hz.
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate / self.window_length as f64
    }

    fn validate(&self) -> Result<()> {
        if self.window_length < 2 || !self.window_length.is_multiple_of(2) {
            return Err(invalid(format!(
                "window length must be even and >= 2, got {}",
                self.window_length
            )));
        }
        if self.hop * 2 != self.window_length {
            return Err(invalid(format!(
                "hop must be half the window length, got {} for {}",
                self.hop, self.window_length
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(())
    }

    /// Periodic square-root Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length as f64;
        (0..self.window_length)
            .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos()).sqrt())
            .collect()
    }
}

/// Complex spectrogram indexed by (frame, bin, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct StftTensor {
    config: StftConfig,
    frames: usize,
    bins: usize,
    channels: usize,
    signal_len: usize,
    /// Bin-major: `values[(bin * frames + frame) * channels + channel]`.
    values: Vec<Complex64>,
}

impl StftTensor {
    pub fn zeros(config: StftConfig, frames: usize, channels: usize, signal_len: usize) -> Self {
        let bins = config.bins();
        Self {
            config,
            frames,
            bins,
            channels,
            signal_len,
            values: vec![Complex64::new(0.0, 0.0); frames * bins * channels],
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Length of the time signal this tensor was computed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    fn offset(&self, frame: usize, bin: usize) -> usize {
        (bin * self.frames + frame) * self.channels
    }

    pub fn get(&self, frame: usize, bin: usize, channel: usize) -> Complex64 {
        self.values[self.offset(frame, bin) + channel]
    }

    pub fn set(&mut self, frame: usize, bin: usize, channel: usize, value: Complex64) {
        let o = self.offset(frame, bin);
        self.values[o + channel] = value;
    }

    /// All channels of one time-frequency point.
    pub fn vector(&self, frame: usize, bin: usize) -> &[Complex64] {
        let o = self.offset(frame, bin);
        &self.values[o..o + self.channels]
    }

    pub fn vector_mut(&mut self, frame: usize, bin: usize) -> &mut [Complex64] {
        let o = self.offset(frame, bin);
        &mut self.values[o..o + self.channels]
    }

    /// All frames of one bin, `frames * channels` values.
    pub fn bin_slice(&self, bin: usize) -> &[Complex64] {
        let o = self.offset(0, bin);
        &self.values[o..o + self.frames * self.channels]
    }

    pub fn bin_slice_mut(&mut self, bin: usize) -> &mut [Complex64] {
        let n = self.frames * self.channels;
        let o = self.offset(0, bin);
        &mut self.values[o..o + n]
    }

    /// Mutable per-bin chunks, for parallel processing.
    pub fn bin_chunks_mut(&mut self) -> std::slice::ChunksMut<'_, Complex64> {
        let n = (self.frames * self.channels).max(1);
        self.values.chunks_mut(n)
    }

    /// Tensor with a subset of channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels) {
            return Err(invalid(format!(
                "channel {bad} out of range ({} channels)",
                self.channels
            )));
        }
        let mut out = Self::zeros(self.config, self.frames, channels.len(), self.signal_len);
        for bin in 0..self.bins {
            for frame in 0..self.frames {
                let src = self.vector(frame, bin);
                let dst = out.vector_mut(frame, bin);
                for (d, &c) in dst.iter_mut().zip(channels) {
                    *d = src[c];
                }
            }
        }
        Ok(out)
    }

    /// Channel-wise concatenation of tensors with the same layout.
    pub fn stack(parts: &[&StftTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("cannot stack zero tensors"))?;
        for p in parts {
            if p.frames != first.frames || p.config != first.config {
                return Err(invalid("stacked tensors differ in frames or configuration"));
            }
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut out = Self::zeros(first.config, first.frames, channels, first.signal_len);
        for bin in 0..first.bins {
            for frame in 0..first.frames {
                let dst = out.vector_mut(frame, bin);
                let mut k = 0;
                for p in parts {
                    let src = p.vector(frame, bin);
                    dst[k..k + src.len()].copy_from_slice(src);
                    k += src.len();
                }
            }
        }
        Ok(out)
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &StftTensor) -> Result<Self> {
        if self.values.len() != other.values.len() || self.channels != other.channels {
            return Err(invalid("tensor shapes differ"));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Forward transform of `channels x samples` input.
///
/// Each frame is windowed and circularly rotated by half a window before the
/// FFT, so a pulse at the frame center has zero phase.
pub fn analyze(signal: &[Vec<f64>], config: &StftConfig) -> Result<StftTensor> {
    config.validate()?;
    let channels = signal.len();
    if channels == 0 {
        return Err(invalid("signal has no channels"));
    }
    let len = signal[0].len();
    if signal.iter().any(|c| c.len() != len) {
        return Err(invalid("channels have different lengths"));
    }
    if len < config.window_length {
        return Err(invalid(format!(
            "signal of {len} samples is shorter than the {}-sample window",
            config.window_length
        )));
    }
    if signal.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("signal has non-finite samples"));
    }
    let n = config.window_length;
    let half = n / 2;
    let frames = config.frame_count(len);
    let window = config.window();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = StftTensor::zeros(*config, frames, channels, len);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (ch, x) in signal.iter().enumerate() {
        for k in 0..frames {
            let start = k * config.hop;
            for i in 0..n {
                buf[(i + half) % n] = Complex64::new(x[start + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for (f, &v) in buf.iter().take(config.bins()).enumerate() {
                out.set(k, f, ch, v);
            }
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse of [`analyze`].
///
/// Samples not covered by two frames (the first and last half window, and
/// any tail after the last frame) are only partially reconstructed.
pub fn synthesize(tensor: &StftTensor, config: &StftConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if tensor.config != *config {
        return Err(invalid(
            "tensor was produced with a different filterbank configuration",
        ));
    }
    let n = config.window_length;
    let half = n / 2;
    let bins = config.bins();
    let window = config.window();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = vec![vec![0.0; tensor.signal_len]; tensor.channels];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for (ch, y) in out.iter_mut().enumerate() {
        for k in 0..tensor.frames {
            for f in 0..bins {
                buf[f] = tensor.get(k, f, ch);
            }
            // DC and Nyquist of a real frame are real.
            buf[0].im = 0.0;
            buf[half].im = 0.0;
            for f in 1..half {
                buf[n - f] = buf[f].conj();
            }
            ifft.process(&mut buf);
            let start = k * config.hop;
            for i in 0..n {
                y[start + i] += buf[(i + half) % n].re * scale * window[i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, channels: usize, len: usize) -> Vec<Vec<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..channels)
            .map(|_| (0..len).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn frame_count_and_shape() {
        let cfg = StftConfig::default();
        let t = analyze(&noise(1, 2, 512 + 256 * 3 + 100), &cfg).unwrap();
        assert_eq!(t.frames(), 4);
        assert_eq!(t.bins(), 257);
        assert_eq!(t.channels(), 2);
        assert!(analyze(&noise(1, 1, 511), &cfg).is_err());
    }

    #[test]
    fn tone_at_bin_center_is_concentrated() {
        let cfg = StftConfig::default();
        let bin = 40;
        let x: Vec<f64> = (0..4096)
            .map(|i| (2.0 * std::f64::consts::PI * bin as f64 * i as f64 / 512.0).cos())
            .collect();
        let t = analyze(&[x], &cfg).unwrap();
        for k in 0..t.frames() {
            let total: f64 = (0..t.bins()).map(|f| t.get(k, f, 0).norm_sqr()).sum();
            let near: f64 = (bin - 1..=bin + 1).map(|f| t.get(k, f, 0).norm_sqr()).sum();
            assert!(near >= 0.99 * total, "{}", near / total);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = StftConfig::default();
        let t = analyze(&[vec![0.0; 2048]], &cfg).unwrap();
        assert!(t.bin_slice(7).iter().all(|z| z.norm() == 0.0));
        let y = synthesize(&t, &cfg).unwrap();
        assert!(y[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::default();
        let x = noise(2, 1, 4096);
        let t = analyze(&x, &cfg).unwrap();
        let w = cfg.window();
        let n = cfg.window_length;
        for k in 0..t.frames() {
            let time: f64 = (0..n).map(|i| (x[0][k * cfg.hop + i] * w[i]).powi(2)).sum();
            let mut freq = t.get(k, 0, 0).norm_sqr() + t.get(k, n / 2, 0).norm_sqr();
            for f in 1..n / 2 {
                freq += 2.0 * t.get(k, f, 0).norm_sqr();
            }
            freq /= n as f64;
            assert!((freq - time).abs() <= 1e-6 * time);
        }
    }

    #[test]
    fn perfect_reconstruction_interior() {
        let cfg = StftConfig::default();
        let x = noise(3, 3, 16_000);
        let t = analyze(&x, &cfg).unwrap();
        let y = synthesize(&t, &cfg).unwrap();
        let n = cfg.window_length;
        let end = (t.frames() - 1) * cfg.hop + n;
        for (a, b) in x.iter().zip(&y) {
            let interior = n..end - n;
            let err = interior.clone().map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
            let peak = interior.map(|i| a[i].abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10 * peak, "{err:e}");
        }
    }

    #[test]
    fn synthesis_rejects_foreign_config() {
        let cfg = StftConfig::default();
        let t = analyze(&noise(4, 1, 2048), &cfg).unwrap();
        let other = StftConfig {
            sample_rate: 8000.0,
            ..cfg
        };
        assert!(synthesize(&t, &other).is_err());
    }

    #[test]
    fn zero_phase_convention() {
        let cfg = StftConfig::default();
        let mut x = vec![0.0; 512];
        x[256] = 1.0;
        let t = analyze(&[x], &cfg).unwrap();
        for f in 0..t.bins() {
            let v = t.get(0, f, 0);
            assert!(v.im.abs() < 1e-12 && (v.re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn select_and_stack() {
        let cfg = StftConfig::default();
        let t = analyze(&noise(5, 3, 2048), &cfg).unwrap();
        let a = t.select_channels(&[2, 0]).unwrap();
        let b = t.select_channels(&[1]).unwrap();
        let s = StftTensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.vector(2, 9), &[t.get(2, 9, 2), t.get(2, 9, 0), t.get(2, 9, 1)]);
        assert!(t.select_channels(&[3]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn analysis_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let cfg = StftConfig::default();
                let x = noise(seed, 1, 1800);
                let y = noise(seed.wrapping_add(1), 1, 1800);
                let z = vec![x[0].iter().zip(&y[0]).map(|(p, q)| a * p + b * q).collect::<Vec<_>>()];
                let (tx, ty, tz) = (analyze(&x, &cfg).unwrap(), analyze(&y, &cfg).unwrap(), analyze(&z, &cfg).unwrap());
                for k in 0..tz.frames() {
                    for f in 0..tz.bins() {
                        let d = tz.get(k, f, 0) - (tx.get(k, f, 0) * a + ty.get(k, f, 0) * b);
                        prop_assert!(d.norm() <= 1e-11);
                    }
                }
            }
        }
    }
}
