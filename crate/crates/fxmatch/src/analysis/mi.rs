//! Histogram mutual information and the per-parameter MMI table.

use rand::Rng;

use super::cca_project;
use crate::dafx::{self, EffectId};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::trainer::RunSpec;
use crate::vae::{spectrogram_batch, SpectroVae};
use crate::AudioBuffer;

pub const MI_BINS: usize = 32;

/// Equal-width 2-D histogram estimate in nats, clamped at zero. A constant
/// input has no information by definition.
pub fn mutual_info(a: &[f64], b: &[f64], bins: usize) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    assert!(a.len() >= 100, "too few samples for a histogram estimate");
    assert!(bins >= 2);

    let Some(ra) = value_range(a) else { return 0.0 };
    let Some(rb) = value_range(b) else { return 0.0 };

    let n = a.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (&va, &vb) in a.iter().zip(b) {
        let i = bin_index(va, ra, bins);
        let j = bin_index(vb, rb, bins);
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }

    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (pij * n * n / (pa[i] as f64 * pb[j] as f64)).ln();
        }
    }
    mi.max(0.0)
}

fn value_range(v: &[f64]) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (hi > lo).then_some((lo, hi))
}

fn bin_index(v: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MmiEntry {
    pub param: String,
    pub mmi: f64,
}

/// Per-parameter MMI: project embeddings against the full theta matrix with
/// 2-component CCA, then take each parameter's best axis. Sorted descending.
pub fn mmi_from(
    embeddings: &[Vec<f64>],
    thetas: &[Vec<f64>],
    param_names: &[&str],
) -> Result<Vec<MmiEntry>> {
    assert_eq!(embeddings.len(), thetas.len(), "row count mismatch");
    let p = param_names.len();
    assert!(thetas.iter().all(|t| t.len() == p), "theta width mismatch");

    let (proj, _) = cca_project(embeddings, thetas, 2)?;
    let axes: Vec<Vec<f64>> = (0..2)
        .map(|a| proj.iter().map(|row| row[a]).collect())
        .collect();

    let mut table: Vec<MmiEntry> = param_names
        .iter()
        .enumerate()
        .map(|(j, &name)| {
            let column: Vec<f64> = thetas.iter().map(|t| t[j]).collect();
            let mmi = axes
                .iter()
                .map(|axis| mutual_info(&column, axis, MI_BINS))
                .fold(0.0f64, f64::max);
            MmiEntry {
                param: name.to_string(),
                mmi,
            }
        })
        .collect();
    table.sort_by(|a, b| b.mmi.total_cmp(&a.mmi));
    Ok(table)
}

/// Sweep random parameter settings over one fixed audio patch, embed every
/// processed result, and score each parameter's recoverability.
pub fn mmi_table<R: Rng + ?Sized>(
    effect: EffectId,
    vae: &SpectroVae,
    store: &ParamStore<f32>,
    spec: &RunSpec,
    audio: &AudioBuffer,
    n: usize,
    rng: &mut R,
) -> Result<Vec<MmiEntry>> {
    assert_eq!(audio.len(), spec.patch_len, "audio must be one full patch");
    let desc = dafx::descriptor(effect);

    let mut thetas = Vec::with_capacity(n);
    let mut embeddings = Vec::with_capacity(n);
    let mut batch_specs = Vec::new();
    let flush =
        |specs: &mut Vec<crate::stft::Spectrogram>, out: &mut Vec<Vec<f64>>| {
            if specs.is_empty() {
                return;
            }
            let refs: Vec<&crate::stft::Spectrogram> = specs.iter().collect();
            let emb = vae.embed(store, &spectrogram_batch(&refs));
            let dim = emb.shape()[1];
            for row in 0..specs.len() {
                out.push(
                    emb.data()[row * dim..(row + 1) * dim]
                        .iter()
                        .map(|&v| v as f64)
                        .collect(),
                );
            }
            specs.clear();
        };

    for _ in 0..n {
        let theta = dafx::random_theta(effect, rng);
        let wet = dafx::process_buffer(effect, audio, &theta)?;
        let normalized = match crate::audio::peak_normalize(&wet, crate::datagen::NORMALIZE_DBFS) {
            Ok(buf) => buf,
            // A fully gated output carries no parameter information either
            // way; keep the row so thetas and embeddings stay aligned.
            Err(crate::error::Error::SilentInput) => wet,
            Err(e) => return Err(e),
        };
        batch_specs.push(spec.patch_spectrogram(&normalized.samples)?);
        thetas.push(theta.iter().map(|&v| v as f64).collect::<Vec<f64>>());
        if batch_specs.len() == 32 {
            flush(&mut batch_specs, &mut embeddings);
        }
    }
    flush(&mut batch_specs, &mut embeddings);

    let names: Vec<&str> = desc.params.iter().map(|p| p.name).collect();
    mmi_from(&embeddings, &thetas, &names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniforms(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn identity_saturates_at_log_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = uniforms(&mut rng, 10_000);
        let mi = mutual_info(&a, &a, MI_BINS);
        assert!((mi - (MI_BINS as f64).ln()).abs() <= 0.05, "mi {mi}");
    }

    #[test]
    fn independent_uniforms_stay_below_bias_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = uniforms(&mut rng, 10_000);
        let b = uniforms(&mut rng, 10_000);
        let mi = mutual_info(&a, &b, MI_BINS);
        assert!(mi <= 0.08, "mi {mi}");
    }

    #[test]
    fn constant_input_has_zero_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = uniforms(&mut rng, 500);
        let b = vec![2.5; 500];
        assert_eq!(mutual_info(&a, &b, MI_BINS), 0.0);
        assert_eq!(mutual_info(&b, &a, MI_BINS), 0.0);
    }

    #[test]
    fn estimator_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = uniforms(&mut rng, 256);
            let b: Vec<f64> = a
                .iter()
                .map(|&v| 0.5 * v + 0.5 * rng.gen::<f64>())
                .collect();
            let ab = mutual_info(&a, &b, MI_BINS);
            let ba = mutual_info(&b, &a, MI_BINS);
            assert!((ab - ba).abs() <= 1e-9, "{ab} vs {ba}");
        }
    }

    #[test]
    fn planted_dependence_dominates_the_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let thetas: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let embeddings: Vec<Vec<f64>> = thetas
            .iter()
            .map(|t| {
                let mut e: Vec<f64> = (0..16).map(|_| 0.05 * rng.gen::<f64>()).collect();
                e[0] += t[1];
                e
            })
            .collect();
        let table = mmi_from(&embeddings, &thetas, &["a", "b", "c"]).unwrap();
        assert_eq!(table[0].param, "b");
        assert!(table[0].mmi >= 1.0, "{table:?}");
        assert!(table[1].mmi <= 0.2, "{table:?}");
    }

    #[test]
    fn unrelated_parameters_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 10_000;
        let embeddings: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let thetas: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let table = mmi_from(&embeddings, &thetas, &["a", "b", "c"]).unwrap();
        assert!(table.iter().all(|e| e.mmi <= 0.1), "{table:?}");
    }
}
