//! STFT front-end: Hann-windowed magnitude spectrograms with power-law
//! compression, shared by the encoder input pipeline and the spectral losses.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// STFT parameters. `window_len <= fft_bins`; frames are zero-padded out to
/// `fft_bins` before the transform. `compression_exponent` is applied to the
/// magnitudes (|X|^c).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub fft_bins: usize,
    pub window_len: usize,
    pub hop_len: usize,
    pub compression_exponent: f32,
}

impl StftConfig {
    pub fn new(fft_bins: usize, window_len: usize, hop_len: usize, compression_exponent: f32) -> Self {
        assert!(window_len <= fft_bins && hop_len <= window_len && compression_exponent > 0.0);
        Self {
            fft_bins,
            window_len,
            hop_len,
            compression_exponent,
        }
    }

    /// Full-scale config: 4096 FFT bins, 2048 Hann window, 1024 hop, 0.3 exponent.
    pub fn paper() -> Self {
        Self::new(4096, 2048, 1024, 0.3)
    }

    /// Desk-scale config: 1024 FFT bins, 512 Hann window, 256 hop, 0.3 exponent.
    pub fn desk() -> Self {
        Self::new(1024, 512, 256, 0.3)
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_bins / 2 + 1
    }

    /// `1 + floor((len - window_len) / hop_len)`, no center padding.
    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.window_len {
            return Err(Error::TooShort {
                len,
                min: self.window_len,
            });
        }
        Ok(1 + (len - self.window_len) / self.hop_len)
    }
}

/// Magnitude-compressed time-frequency matrix, `[freq_bins x frames]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<f32>,
    pub freq_bins: usize,
    pub frames: usize,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn at(&self, freq: usize, frame: usize) -> f32 {
        self.data[freq * self.frames + frame]
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, &v| m.max(v))
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Complex STFT in f64: Hann window of `window_len`, zero-padded to `fft_len`.
/// Returns one `Vec<Complex<f64>>` of `fft_len/2 + 1` bins per frame.
pub fn stft_complex(
    samples: &[f32],
    fft_len: usize,
    window_len: usize,
    hop_len: usize,
) -> Result<Vec<Vec<Complex<f64>>>> {
    if samples.len() < window_len {
        return Err(Error::TooShort {
            len: samples.len(),
            min: window_len,
        });
    }
    let frames = 1 + (samples.len() - window_len) / hop_len;
    let window = hann_window(window_len);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let half = fft_len / 2 + 1;

    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    for f in 0..frames {
        let start = f * hop_len;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < window_len {
                Complex::new(samples[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        out.push(buf[..half].to_vec());
    }
    Ok(out)
}

/// Compressed magnitude spectrogram: entry = |X|^compression_exponent.
pub fn stft_magnitude(buffer: &AudioBuffer, config: &StftConfig) -> Result<Spectrogram> {
    let frames_list = stft_complex(
        &buffer.samples,
        config.fft_bins,
        config.window_len,
        config.hop_len,
    )?;
    let frames = frames_list.len();
    let freq_bins = config.freq_bins();
    let exp = config.compression_exponent as f64;
    let mut data = vec![0.0f32; freq_bins * frames];
    for (t, frame) in frames_list.iter().enumerate() {
        for (k, c) in frame.iter().enumerate() {
            data[k * frames + t] = c.norm().powf(exp) as f32;
        }
    }
    Ok(Spectrogram {
        data,
        freq_bins,
        frames,
        config: *config,
    })
}

/// Scale all entries into [0, 1] by the global maximum. All-zero input is
/// passed through unchanged.
pub fn normalize_spectrogram(spec: &Spectrogram) -> Spectrogram {
    let max = spec.max_value();
    if max <= 0.0 {
        return spec.clone();
    }
    let inv = 1.0 / max;
    Spectrogram {
        data: spec.data.iter().map(|&v| v * inv).collect(),
        ..spec.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer_of(n: usize, f: impl Fn(usize) -> f32) -> AudioBuffer {
        AudioBuffer::new((0..n).map(f).collect(), 24000)
    }

    #[test]
    fn paper_config_shape() {
        // 131072 samples with 4096/2048/1024 -> 2049 x 127
        let b = buffer_of(131072, |i| ((i % 64) as f32 / 64.0) - 0.5);
        let s = stft_magnitude(&b, &StftConfig::paper()).unwrap();
        assert_eq!(s.freq_bins, 2049);
        assert_eq!(s.frames, 127);
    }

    #[test]
    fn desk_config_shape() {
        let b = buffer_of(32768, |i| ((i % 64) as f32 / 64.0) - 0.5);
        let s = stft_magnitude(&b, &StftConfig::desk()).unwrap();
        assert_eq!(s.freq_bins, 513);
        assert_eq!(s.frames, 127);
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let b = buffer_of(4096, |_| 0.0);
        let s = stft_magnitude(&b, &StftConfig::desk()).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_buffer_errors() {
        let b = buffer_of(100, |_| 0.1);
        assert!(matches!(
            stft_magnitude(&b, &StftConfig::desk()),
            Err(Error::TooShort { .. })
        ));
    }

    /// Brute-force DFT of one Hann-windowed frame, used as the oracle for the
    /// bin-centered sine test.
    fn dft_magnitude_oracle(frame: &[f64], fft_len: usize, bin: usize) -> f64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (n, &x) in frame.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * bin as f64 * n as f64 / fft_len as f64;
            re += x * ang.cos();
            im += x * ang.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn bin_centered_sine_peaks_at_bin_k() {
        let cfg = StftConfig::desk();
        let rate = 24000u32;
        let k = 40usize; // f = k * rate / fft_bins
        let f = k as f32 * rate as f32 / cfg.fft_bins as f32;
        let b = AudioBuffer::new(
            (0..8192)
                .map(|i| (2.0 * std::f32::consts::PI * f * i as f32 / rate as f32).sin())
                .collect(),
            rate,
        );
        let s = stft_magnitude(&b, &cfg).unwrap();
        for t in 0..s.frames {
            let mut best = 0usize;
            let mut best_v = -1.0f32;
            for q in 0..s.freq_bins {
                if s.at(q, t) > best_v {
                    best_v = s.at(q, t);
                    best = q;
                }
            }
            assert_eq!(best, k, "frame {t}");
        }
        // cross-check one frame against the brute-force DFT oracle
        let window = hann_window(cfg.window_len);
        let frame: Vec<f64> = (0..cfg.window_len)
            .map(|i| b.samples[i] as f64 * window[i])
            .collect();
        let want = dft_magnitude_oracle(&frame, cfg.fft_bins, k).powf(0.3);
        assert!((s.at(k, 0) as f64 - want).abs() / want < 1e-4);
    }

    #[test]
    fn compression_scale_covariance() {
        // doubling the input scales compressed entries by 2^0.3
        let b = buffer_of(4096, |i| (i as f32 * 0.11).sin() * 0.3);
        let doubled = AudioBuffer::new(b.samples.iter().map(|&s| s * 2.0).collect(), 24000);
        let cfg = StftConfig::desk();
        let s1 = stft_magnitude(&b, &cfg).unwrap();
        let s2 = stft_magnitude(&doubled, &cfg).unwrap();
        let factor = 2.0f32.powf(0.3);
        for (a, b) in s1.data.iter().zip(s2.data.iter()) {
            if *a > 1e-4 {
                assert!((b / a - factor).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn normalize_spectrogram_contract() {
        let b = buffer_of(4096, |i| (i as f32 * 0.07).sin() * 0.8);
        let s = stft_magnitude(&b, &StftConfig::desk()).unwrap();
        let n = normalize_spectrogram(&s);
        assert!((n.max_value() - 1.0).abs() < 1e-6);
        // ordering preserved (monotone map)
        for i in 1..s.data.len() {
            let before = s.data[i - 1].partial_cmp(&s.data[i]).unwrap();
            let after = n.data[i - 1].partial_cmp(&n.data[i]).unwrap();
            assert_eq!(before, after);
        }
        // all-zero passes through
        let z = Spectrogram {
            data: vec![0.0; 12],
            freq_bins: 3,
            frames: 4,
            config: StftConfig::desk(),
        };
        assert_eq!(normalize_spectrogram(&z).data, z.data);
    }
}
