//! Mono audio containers, loudness normalization and resampling.

use crate::error::{Error, Result};

/// Mono sample sequence with a sample rate. The universal signal currency:
/// samples are dimensionless amplitudes, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()))
    }

    /// RMS level in dBFS; `-inf` for an empty or all-zero buffer.
    pub fn rms_dbfs(&self) -> f32 {
        if self.samples.is_empty() {
            return f32::NEG_INFINITY;
        }
        let ms: f64 = self
            .samples
            .iter()
            .map(|&s| (s as f64) * (s as f64))
            .sum::<f64>()
            / self.samples.len() as f64;
        if ms <= 0.0 {
            f32::NEG_INFINITY
        } else {
            (10.0 * ms.log10()) as f32
        }
    }

    pub fn duration_secs(&self) -> f32 {
        self.samples.len() as f32 / self.sample_rate as f32
    }
}

/// Scale a buffer so its peak sits at `target_dbfs` (e.g. -12.0 for the
/// dataset-generation level). Pure rescale, waveform shape preserved.
pub fn peak_normalize(buffer: &AudioBuffer, target_dbfs: f32) -> Result<AudioBuffer> {
    let peak = buffer.peak();
    if peak <= 0.0 {
        return Err(Error::SilentInput);
    }
    let target = 10.0f32.powf(target_dbfs / 20.0);
    let scale = target / peak;
    Ok(AudioBuffer::new(
        buffer.samples.iter().map(|&s| s * scale).collect(),
        buffer.sample_rate,
    ))
}

/// Resample by linear interpolation to `target_rate`. Identity when the
/// rates already match.
pub fn resample_linear(buffer: &AudioBuffer, target_rate: u32) -> AudioBuffer {
    if buffer.sample_rate == target_rate || buffer.samples.is_empty() {
        return AudioBuffer::new(buffer.samples.clone(), target_rate);
    }
    let ratio = buffer.sample_rate as f64 / target_rate as f64;
    let out_len = ((buffer.samples.len() as f64) / ratio).floor() as usize;
    AudioBuffer::new(
        resample_by_ratio(&buffer.samples, ratio, out_len),
        target_rate,
    )
}

/// Read `out_len` samples from `input` at instants `i * ratio`, linearly
/// interpolating between neighbours. Shared by resampling and pitch shifting.
pub fn resample_by_ratio(input: &[f32], ratio: f64, out_len: usize) -> Vec<f32> {
    let n = input.len();
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * ratio;
        let i0 = pos.floor() as usize;
        let frac = (pos - i0 as f64) as f32;
        let a = input.get(i0).copied().unwrap_or(0.0);
        let b = input.get((i0 + 1).min(n.saturating_sub(1))).copied().unwrap_or(a);
        out.push(a + (b - a) * frac);
    }
    out
}

/// `10^(db/20)` as f32.
pub fn db_to_amplitude(db: f32) -> f32 {
    10.0f32.powf(db / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize, freq: f32, rate: u32, amp: f32) -> AudioBuffer {
        let w = 2.0 * std::f32::consts::PI * freq / rate as f32;
        AudioBuffer::new((0..n).map(|i| amp * (w * i as f32).sin()).collect(), rate)
    }

    #[test]
    fn peak_normalize_sine_to_minus_12() {
        let b = sine(24000, 441.0, 24000, 1.0);
        let out = peak_normalize(&b, -12.0).unwrap();
        // 10^(-12/20) = 0.251189
        assert!((out.peak() - 0.251189).abs() < 1e-5);
    }

    #[test]
    fn peak_normalize_fixed_point() {
        let b = sine(24000, 441.0, 24000, 0.251189);
        let out = peak_normalize(&b, -12.0).unwrap();
        for (x, y) in b.samples.iter().zip(out.samples.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn peak_normalize_silent_errors() {
        let b = AudioBuffer::new(vec![0.0; 100], 24000);
        assert!(matches!(peak_normalize(&b, -12.0), Err(Error::SilentInput)));
    }

    #[test]
    fn resample_halves_length_and_matches_oracle() {
        // 48 kHz -> 24 kHz on a deterministic ramp-ish signal.
        let src: Vec<f32> = (0..1000).map(|i| ((i * 7919) % 997) as f32 / 997.0 - 0.5).collect();
        let b = AudioBuffer::new(src.clone(), 48000);
        let out = resample_linear(&b, 24000);
        assert_eq!(out.samples.len(), 500);
        assert_eq!(out.sample_rate, 24000);
        // independent oracle: brute-force linear interpolation at each output instant
        for i in 0..out.samples.len() {
            let pos = i as f64 * 2.0;
            let i0 = pos.floor() as usize;
            let frac = (pos - i0 as f64) as f32;
            let a = src[i0];
            let bsample = src[(i0 + 1).min(src.len() - 1)];
            let expect = a + (bsample - a) * frac;
            assert!((out.samples[i] - expect).abs() < 1e-7, "sample {i}");
        }
    }

    #[test]
    fn resample_identity_when_rates_match() {
        let b = sine(1000, 100.0, 24000, 0.5);
        let out = resample_linear(&b, 24000);
        assert_eq!(out.samples, b.samples);
    }
}
