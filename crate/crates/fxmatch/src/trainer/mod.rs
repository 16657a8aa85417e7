//! Training harnesses: scale presets, the VAE loop, the end-to-end loop,
//! checkpoint persistence, and metric logging.

mod checkpoint;
mod e2e_train;
mod metrics;
mod vae_train;

pub use checkpoint::{
    crc32, effect_from_meta, load_checkpoint, load_e2e_checkpoint, load_encoder_checkpoint,
    load_vae_checkpoint, save_checkpoint, spec_from_meta,
};
pub use e2e_train::{
    check_checkpoint_effect, style_match, train_e2e, E2eTrainConfig, E2eTrainOutput, StyleMatch,
};
pub use metrics::{MetricLog, MetricRow, Split};
pub use vae_train::{train_vae, VaeTrainConfig, VaeTrainOutput};

pub(crate) use vae_train::effected_patch;

use rand::Rng;

use crate::error::Result;
use crate::stft::{normalize_spectrogram, stft_magnitude, Spectrogram, StftConfig};
use crate::AudioBuffer;

/// Resolved scale preset: sampling, patch geometry, and the encoder's STFT
/// front-end. The model consumes spectrograms of `patch_len` samples;
/// training segments are half that and get tiled back up when embedded.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunSpec {
    pub sample_rate: u32,
    pub patch_len: usize,
    pub stft: StftConfig,
}

impl RunSpec {
    pub fn desk() -> Self {
        Self {
            sample_rate: 24000,
            patch_len: 32768,
            stft: StftConfig::desk(),
        }
    }

    pub fn paper() -> Self {
        Self {
            sample_rate: 24000,
            patch_len: 131_072,
            stft: StftConfig::paper(),
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.stft.freq_bins()
    }

    pub fn frames(&self) -> usize {
        self.stft
            .num_frames(self.patch_len)
            .expect("patch shorter than the analysis window")
    }

    pub fn segment_len(&self) -> usize {
        self.patch_len / 2
    }

    /// Normalized model-input spectrogram of a full-patch signal.
    pub fn patch_spectrogram(&self, samples: &[f32]) -> Result<Spectrogram> {
        let buf = AudioBuffer::new(samples.to_vec(), self.sample_rate);
        Ok(normalize_spectrogram(&stft_magnitude(&buf, &self.stft)?))
    }

    /// Segments are half a patch; tile them to the model input length
    /// before the STFT.
    pub fn segment_spectrogram(&self, segment: &[f32]) -> Result<Spectrogram> {
        let tiled: Vec<f32> = (0..self.patch_len)
            .map(|i| segment[i % segment.len()])
            .collect();
        self.patch_spectrogram(&tiled)
    }
}

/// Box-Muller standard normals.
pub(crate) fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f32]) {
    let mut i = 0;
    while i < out.len() {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        out[i] = (r * c) as f32;
        i += 1;
        if i < out.len() {
            out[i] = (r * s) as f32;
            i += 1;
        }
    }
}

/// Split `count` items into batches of at most `batch_size`.
pub(crate) fn batch_sizes(count: usize, batch_size: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left = count;
    while left > 0 {
        let b = left.min(batch_size);
        out.push(b);
        left -= b;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_geometry() {
        let spec = RunSpec::desk();
        assert_eq!(spec.freq_bins(), 513);
        assert_eq!(spec.frames(), 127);
        assert_eq!(spec.segment_len(), 16384);
    }

    #[test]
    fn paper_geometry() {
        let spec = RunSpec::paper();
        assert_eq!(spec.freq_bins(), 2049);
        assert_eq!(spec.frames(), 127);
    }

    #[test]
    fn tiling_repeats_the_segment() {
        let spec = RunSpec::desk();
        let seg: Vec<f32> = (0..spec.segment_len()).map(|i| (i as f32 * 0.001).sin()).collect();
        let direct = spec.segment_spectrogram(&seg).unwrap();
        let mut tiled = seg.clone();
        tiled.extend_from_slice(&seg);
        let manual = spec.patch_spectrogram(&tiled).unwrap();
        assert_eq!(direct.data, manual.data);
    }

    #[test]
    fn normals_have_sane_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut buf = vec![0.0f32; 40_000];
        fill_standard_normal(&mut rng, &mut buf);
        let mean = buf.iter().map(|&v| v as f64).sum::<f64>() / buf.len() as f64;
        let var = buf.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / buf.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn batching_covers_everything() {
        assert_eq!(batch_sizes(20, 8), vec![8, 8, 4]);
        assert_eq!(batch_sizes(8, 8), vec![8]);
        assert_eq!(batch_sizes(0, 8), Vec::<usize>::new());
    }
}
