//! Self-supervised paired-example generation: patch sampling, pitch/time
//! augmentation, effect application, joint normalization, and a/b halving.
//! A synthetic source bank makes the pipeline runnable with no external data.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{peak_normalize, resample_by_ratio, resample_linear, AudioBuffer};
use crate::dafx::{self, EffectId};
use crate::error::{Error, Result};
use crate::wav;

/// RMS floor for a usable patch.
pub const SILENCE_DBFS: f32 = -45.0;
/// Both sides of a pair are peak-normalized to this level.
pub const NORMALIZE_DBFS: f32 = -12.0;
/// Widest upward pitch shift, in semitones; sets the sampling margin.
pub const PITCH_RANGE_SEMITONES: f32 = 2.0;
const MAX_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthKind {
    Harmonic,
    NoiseBurst,
    Chirp,
    PulseTrain,
}

impl SynthKind {
    pub fn all() -> [SynthKind; 4] {
        [
            SynthKind::Harmonic,
            SynthKind::NoiseBurst,
            SynthKind::Chirp,
            SynthKind::PulseTrain,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    path: PathBuf,
    samples: usize,
    sample_rate: u32,
}

#[derive(Debug)]
enum Source {
    Synthetic,
    WavDir { entries: Vec<ManifestEntry> },
}

/// Audio supply for the generation pipeline: either the synthetic bank or a
/// directory of wav files scanned up front.
#[derive(Debug)]
pub struct Corpus {
    source: Source,
    pub sample_rate: u32,
    pub patch_len: usize,
    cache: RefCell<Option<(PathBuf, AudioBuffer)>>,
}

impl Corpus {
    pub fn synthetic(sample_rate: u32, patch_len: usize) -> Self {
        Self {
            source: Source::Synthetic,
            sample_rate,
            patch_len,
            cache: RefCell::new(None),
        }
    }

    /// Scan `dir` recursively for wav files. A pre-existing `manifest.json`
    /// listing paths, lengths, and rates is trusted as-is; otherwise the
    /// directory is scanned in memory. Nothing is written back.
    pub fn from_wav_dir(dir: &Path, sample_rate: u32, patch_len: usize) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let entries: Vec<ManifestEntry> = if manifest_path.is_file() {
            let text = std::fs::read_to_string(&manifest_path)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))?
        } else {
            let mut files = Vec::new();
            collect_wavs(dir, &mut files)?;
            files.sort();
            let mut entries = Vec::with_capacity(files.len());
            for path in files {
                let buf = wav::read_wav_native(&path)?;
                entries.push(ManifestEntry {
                    path,
                    samples: buf.len(),
                    sample_rate: buf.sample_rate,
                });
            }
            entries
        };
        if entries.is_empty() {
            return Err(Error::DataGenerationFailed(format!(
                "no wav files under {}",
                dir.display()
            )));
        }
        Ok(Self {
            source: Source::WavDir { entries },
            sample_rate,
            patch_len,
            cache: RefCell::new(None),
        })
    }

    /// Source samples needed so a maximal upward pitch shift still fills a
    /// patch.
    pub fn margin_len(&self) -> usize {
        margin_len(self.patch_len)
    }

    /// A patch of exactly `patch_len` samples with RMS above the silence
    /// floor. Retries random files/offsets up to 32 times.
    pub fn sample_patch<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AudioBuffer> {
        let margined = self.sample_margined(rng)?;
        Ok(AudioBuffer::new(
            margined.samples[..self.patch_len].to_vec(),
            self.sample_rate,
        ))
    }

    /// A window of `margin_len` samples whose leading `patch_len` passes the
    /// silence check; feed this to `augment`.
    pub fn sample_margined<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AudioBuffer> {
        let margin = self.margin_len();
        for _ in 0..MAX_ATTEMPTS {
            let source = match &self.source {
                Source::Synthetic => {
                    let kind = SynthKind::all()[rng.gen_range(0..4)];
                    synth_source(rng, kind, self.sample_rate, 2 * self.patch_len)
                }
                Source::WavDir { entries } => {
                    let entry = &entries[rng.gen_range(0..entries.len())];
                    self.load_resampled(entry)?
                }
            };
            if source.len() < margin {
                continue;
            }
            let offset = rng.gen_range(0..=source.len() - margin);
            let window = &source.samples[offset..offset + margin];
            let head = AudioBuffer::new(window[..self.patch_len].to_vec(), self.sample_rate);
            if head.rms_dbfs() > SILENCE_DBFS {
                return Ok(AudioBuffer::new(window.to_vec(), self.sample_rate));
            }
        }
        Err(Error::NoNonSilentAudio(MAX_ATTEMPTS))
    }

    fn load_resampled(&self, entry: &ManifestEntry) -> Result<AudioBuffer> {
        if let Some((path, buf)) = self.cache.borrow().as_ref() {
            if *path == entry.path {
                return Ok(buf.clone());
            }
        }
        let raw = wav::read_wav_native(&entry.path)?;
        let buf = resample_linear(&raw, self.sample_rate);
        *self.cache.borrow_mut() = Some((entry.path.clone(), buf.clone()));
        Ok(buf)
    }
}

fn margin_len(patch_len: usize) -> usize {
    let ratio = 2f64.powf(PITCH_RANGE_SEMITONES as f64 / 12.0);
    (patch_len as f64 * ratio).ceil() as usize + 1
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Resample so the content shifts by `semitones`, preserving length
/// semantics: reading the input faster raises pitch.
pub fn pitch_shift(samples: &[f32], semitones: f32, out_len: usize) -> Vec<f32> {
    let ratio = 2f64.powf(semitones as f64 / 12.0);
    resample_by_ratio(samples, ratio, out_len)
}

/// Scene augmentation: random pitch shift within +/-2 semitones plus a
/// random crop offset (time shift). Output is exactly `patch_len` samples.
pub fn augment<R: Rng + ?Sized>(source: &AudioBuffer, patch_len: usize, rng: &mut R) -> AudioBuffer {
    let semitones = rng.gen_range(-PITCH_RANGE_SEMITONES..=PITCH_RANGE_SEMITONES);
    let ratio = 2f64.powf(semitones as f64 / 12.0);
    let shifted_len = ((source.len() - 1) as f64 / ratio).floor() as usize;
    let shifted = pitch_shift(&source.samples, semitones, shifted_len.max(patch_len));
    let max_offset = shifted.len() - patch_len;
    let offset = if max_offset > 0 {
        rng.gen_range(0..=max_offset)
    } else {
        0
    };
    AudioBuffer::new(
        shifted[offset..offset + patch_len].to_vec(),
        source.sample_rate,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// One training example: the unprocessed input segment, the effected
/// reference from the opposite half, and the effected ground truth aligned
/// with the input.
#[derive(Debug, Clone)]
pub struct PairedExample {
    pub input_seg: AudioBuffer,
    pub ref_seg: AudioBuffer,
    pub truth_seg: AudioBuffer,
    pub theta: Vec<f32>,
    pub side: Side,
}

/// Apply a random parameter draw, normalize dry and wet to the same level,
/// halve both, and pick which half plays the input role.
pub fn make_pair<R: Rng + ?Sized>(
    patch: &AudioBuffer,
    effect: EffectId,
    rng: &mut R,
) -> Result<PairedExample> {
    let theta = dafx::random_theta(effect, rng);
    make_pair_with_theta(patch, effect, theta, rng)
}

pub fn make_pair_with_theta<R: Rng + ?Sized>(
    patch: &AudioBuffer,
    effect: EffectId,
    theta: Vec<f32>,
    rng: &mut R,
) -> Result<PairedExample> {
    let effected = dafx::process_buffer(effect, patch, &theta)?;
    let effected = peak_normalize(&effected, NORMALIZE_DBFS)?;
    let dry = peak_normalize(patch, NORMALIZE_DBFS)?;

    let half = patch.len() / 2;
    let seg = |buf: &AudioBuffer, side: Side| -> AudioBuffer {
        let range = match side {
            Side::A => 0..half,
            Side::B => half..2 * half,
        };
        AudioBuffer::new(buf.samples[range].to_vec(), buf.sample_rate)
    };
    let side = if rng.gen::<bool>() { Side::A } else { Side::B };
    let other = match side {
        Side::A => Side::B,
        Side::B => Side::A,
    };
    Ok(PairedExample {
        input_seg: seg(&dry, side),
        ref_seg: seg(&effected, other),
        truth_seg: seg(&effected, side),
        theta,
        side,
    })
}

/// Draw a patch, augment it, and build a pair for `effect`.
pub fn generate_example<R: Rng + ?Sized>(
    corpus: &Corpus,
    effect: EffectId,
    rng: &mut R,
) -> Result<PairedExample> {
    let margined = corpus.sample_margined(rng)?;
    let patch = augment(&margined, corpus.patch_len, rng);
    make_pair(&patch, effect, rng)
}

/// Deterministic synthetic source, `len` samples, peak at most 1.
pub fn synth_source<R: Rng + ?Sized>(
    rng: &mut R,
    kind: SynthKind,
    sample_rate: u32,
    len: usize,
) -> AudioBuffer {
    let sr = sample_rate as f32;
    let mut samples = vec![0.0f32; len];
    match kind {
        SynthKind::Harmonic => {
            let f0 = rng.gen_range(80.0..400.0f32);
            let rolloff = rng.gen_range(0.8..1.6f32);
            let partials = ((sr * 0.45 / f0) as usize).clamp(1, 24);
            let phases: Vec<f32> = (0..partials)
                .map(|_| rng.gen_range(0.0..std::f32::consts::TAU))
                .collect();
            let trem_rate = rng.gen_range(0.3..2.0f32);
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f32 / sr;
                let mut v = 0.0;
                for (k, &ph) in phases.iter().enumerate() {
                    let n = (k + 1) as f32;
                    v += (std::f32::consts::TAU * f0 * n * t + ph).sin() / n.powf(rolloff);
                }
                let trem = 0.75 + 0.25 * (std::f32::consts::TAU * trem_rate * t).sin();
                *s = v * trem;
            }
        }
        SynthKind::NoiseBurst => {
            let burst_rate = rng.gen_range(1.0..4.0f32);
            let phase0 = rng.gen_range(0.0..std::f32::consts::TAU);
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f32 / sr;
                let env = 0.15 + 0.85 * (std::f32::consts::TAU * burst_rate * t + phase0).sin().max(0.0);
                *s = rng.gen_range(-1.0..1.0f32) * env;
            }
        }
        SynthKind::Chirp => {
            let f0 = 100.0f32;
            let f1 = 8000.0f32;
            let dur = len as f32 / sr;
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f32 / sr;
                let phase = std::f32::consts::TAU * (f0 * t + (f1 - f0) * t * t / (2.0 * dur));
                *s = 0.8 * phase.sin();
            }
        }
        SynthKind::PulseTrain => {
            let pitch = rng.gen_range(80.0..200.0f32);
            let period = (sr / pitch) as usize;
            for (i, s) in samples.iter_mut().enumerate() {
                *s = if i % period == 0 { 1.0 } else { 0.0 };
            }
            // rough vowel formants
            use crate::dafx::filters::Biquad;
            let mut filters = [
                Biquad::bandpass(sample_rate, rng.gen_range(400.0..700.0), 4.0),
                Biquad::bandpass(sample_rate, rng.gen_range(1000.0..1800.0), 5.0),
                Biquad::bandpass(sample_rate, rng.gen_range(2200.0..3000.0), 6.0),
            ];
            let gains = [1.0f32, 0.6, 0.35];
            let pulses = std::mem::take(&mut samples);
            samples = pulses
                .iter()
                .map(|&x| {
                    filters
                        .iter_mut()
                        .zip(&gains)
                        .map(|(f, g)| f.process(x) * g)
                        .sum::<f32>()
                })
                .collect();
        }
    }
    let peak = samples.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.9 / peak;
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
    AudioBuffer::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::stft_complex;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dominant_bin(samples: &[f32], fft: usize) -> usize {
        let frames = stft_complex(samples, fft, fft, fft / 4).unwrap();
        let mid = &frames[frames.len() / 2];
        let mut best = 0;
        for (k, c) in mid.iter().enumerate() {
            if c.norm() > mid[best].norm() {
                best = k;
            }
        }
        best
    }

    #[test]
    fn octave_shift_doubles_dominant_bin() {
        // 468.75 Hz sits exactly on bin 40 of a 2048-point fft at 24 kHz.
        let sr = 24000u32;
        let f = 468.75f32;
        let src: Vec<f32> = (0..16384)
            .map(|i| (std::f32::consts::TAU * f * i as f32 / sr as f32).sin())
            .collect();
        assert_eq!(dominant_bin(&src, 2048), 40);
        let up = pitch_shift(&src, 12.0, 8192);
        assert_eq!(dominant_bin(&up, 2048), 80);
    }

    #[test]
    fn augment_is_identity_at_zero_shift() {
        let src = AudioBuffer::new((0..1200).map(|i| (i as f32 * 0.01).sin()).collect(), 24000);
        let out = pitch_shift(&src.samples, 0.0, 1024);
        assert_eq!(out, src.samples[..1024]);
    }

    #[test]
    fn augment_always_fills_patch_len() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus = Corpus::synthetic(24000, 4096);
        for _ in 0..8 {
            let margined = corpus.sample_margined(&mut rng).unwrap();
            assert_eq!(margined.len(), corpus.margin_len());
            let patch = augment(&margined, 4096, &mut rng);
            assert_eq!(patch.len(), 4096);
        }
    }

    #[test]
    fn chirp_sweeps_upward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let buf = synth_source(&mut rng, SynthKind::Chirp, 24000, 32768);
        let frames = stft_complex(&buf.samples, 1024, 1024, 512).unwrap();
        let argmax: Vec<usize> = frames
            .iter()
            .map(|row| {
                let mut best = 0;
                for (k, c) in row.iter().enumerate() {
                    if c.norm() > row[best].norm() {
                        best = k;
                    }
                }
                best
            })
            .collect();
        for w in argmax.windows(2) {
            assert!(w[1] >= w[0], "argmax sequence not monotone: {argmax:?}");
        }
        assert!(argmax[argmax.len() - 1] > argmax[0] + 100);
    }

    #[test]
    fn pair_segments_are_jointly_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus = Corpus::synthetic(24000, 8192);
        let patch = corpus.sample_patch(&mut rng).unwrap();
        let pair = make_pair(&patch, EffectId::Overdrive, &mut rng).unwrap();
        assert_eq!(pair.input_seg.len(), 4096);
        assert_eq!(pair.ref_seg.len(), 4096);
        assert_eq!(pair.truth_seg.len(), 4096);
        // the global peak of the effected signal lands in one of the halves
        let joint = pair.ref_seg.peak().max(pair.truth_seg.peak());
        assert!((joint - 0.251189).abs() < 1e-4, "joint peak {joint}");
        assert!((pair.input_seg.peak() - 0.251189).abs() < 1e-3 || pair.input_seg.peak() < 0.251189 + 1e-4);
    }

    #[test]
    fn sides_partition_the_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corpus = Corpus::synthetic(24000, 8192);
        let patch = corpus.sample_patch(&mut rng).unwrap();
        let theta = dafx::random_theta(EffectId::Delay, &mut rng);
        // regenerate the exact effected signal to place the halves
        let effected = dafx::process_buffer(EffectId::Delay, &patch, &theta).unwrap();
        let effected = peak_normalize(&effected, NORMALIZE_DBFS).unwrap();
        let mut pair_rng = ChaCha8Rng::seed_from_u64(5);
        let pair =
            make_pair_with_theta(&patch, EffectId::Delay, theta.clone(), &mut pair_rng).unwrap();
        match pair.side {
            Side::A => {
                assert_eq!(pair.truth_seg.samples, effected.samples[..4096]);
                assert_eq!(pair.ref_seg.samples, effected.samples[4096..8192]);
            }
            Side::B => {
                assert_eq!(pair.truth_seg.samples, effected.samples[4096..8192]);
                assert_eq!(pair.ref_seg.samples, effected.samples[..4096]);
            }
        }
    }

    #[test]
    fn gain_only_theta_keeps_alignment() {
        // dynamics with mix 0, gate floor, limiter at 0 dB reduces to a
        // constant gain, so truth and input stay sample-aligned.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let corpus = Corpus::synthetic(24000, 8192);
        let patch = corpus.sample_patch(&mut rng).unwrap();
        let theta = vec![0.5, 0.0, 0.0, 0.5, 0.5, 1.0, 0.3, 0.5, 0.5, 0.5];
        let pair = make_pair_with_theta(&patch, EffectId::Dynamics, theta, &mut rng).unwrap();

        let x = &pair.input_seg.samples;
        let y = &pair.truth_seg.samples;
        let dot = |lag: i64| -> f64 {
            let mut acc = 0.0f64;
            for i in 0..x.len() {
                let j = i as i64 + lag;
                if j >= 0 && (j as usize) < y.len() {
                    acc += x[i] as f64 * y[j as usize] as f64;
                }
            }
            acc
        };
        let zero = dot(0);
        for lag in -8i64..=8 {
            assert!(dot(lag) <= zero + 1e-9, "lag {lag} beats zero lag");
        }
        // constant-gain relation on the louder samples
        let ratios: Vec<f32> = x
            .iter()
            .zip(y)
            .filter(|(xi, _)| xi.abs() > 0.05)
            .map(|(xi, yi)| yi / xi)
            .collect();
        let mean = ratios.iter().sum::<f32>() / ratios.len() as f32;
        for r in &ratios {
            assert!((r - mean).abs() < 2e-3 * mean.abs().max(1.0), "ratio {r} vs {mean}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let corpus = Corpus::synthetic(24000, 4096);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            generate_example(&corpus, EffectId::Ambience, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.input_seg.samples, b.input_seg.samples);
        assert_eq!(a.ref_seg.samples, b.ref_seg.samples);
        assert_eq!(a.truth_seg.samples, b.truth_seg.samples);
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.side, b.side);
    }

    #[test]
    fn wav_corpus_scans_without_writing_and_skips_silence() {
        let dir = tempfile::tempdir().unwrap();
        let sine = AudioBuffer::new(
            (0..30000)
                .map(|i| 0.5 * (std::f32::consts::TAU * 220.0 * i as f32 / 24000.0).sin())
                .collect(),
            24000,
        );
        wav::write_wav(&sine, &dir.path().join("tone.wav")).unwrap();
        wav::write_wav(
            &AudioBuffer::new(vec![0.0; 30000], 24000),
            &dir.path().join("silence.wav"),
        )
        .unwrap();

        let corpus = Corpus::from_wav_dir(dir.path(), 24000, 8192).unwrap();
        assert!(!dir.path().join("manifest.json").exists());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..4 {
            let patch = corpus.sample_patch(&mut rng).unwrap();
            assert!(patch.rms_dbfs() > SILENCE_DBFS);
        }

        let silent_dir = tempfile::tempdir().unwrap();
        wav::write_wav(
            &AudioBuffer::new(vec![0.0; 30000], 24000),
            &silent_dir.path().join("quiet.wav"),
        )
        .unwrap();
        let corpus = Corpus::from_wav_dir(silent_dir.path(), 24000, 8192).unwrap();
        assert!(matches!(
            corpus.sample_patch(&mut rng),
            Err(Error::NoNonSilentAudio(32))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn synth_sources_are_loud_enough(seed in 0u64..10_000, kind_idx in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let buf = synth_source(&mut rng, SynthKind::all()[kind_idx], 24000, 16384);
            prop_assert_eq!(buf.len(), 16384);
            prop_assert!(buf.peak() <= 1.0);
            prop_assert!(buf.rms_dbfs() > SILENCE_DBFS);
        }
    }
}
