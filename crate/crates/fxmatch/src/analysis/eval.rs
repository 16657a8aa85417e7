//! Held-out evaluation: controller output against the no-effect and
//! random-parameter baselines, and embedding datasets for the classifier
//! comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EmbeddingSet;
use crate::controller::Controller;
use crate::dafx::{self, EffectId};
use crate::datagen::{generate_example, Corpus, PairedExample};
use crate::error::{Error, Result};
use crate::loss::{mrstft, MrstftConfig};
use crate::nn::{Graph, ParamStore};
use crate::spsa::clamp_theta;
use crate::stft::Spectrogram;
use crate::trainer::RunSpec;
use crate::vae::{spectrogram_batch, SpectroVae};

/// Where evaluation parameters come from: the trained controller, the
/// recorded ground truth, or fresh uniform draws.
pub enum ThetaSource<'a> {
    Model {
        vae: &'a SpectroVae,
        controller: &'a Controller,
        store: &'a ParamStore<f32>,
        epsilon: f32,
    },
    Oracle,
    Random { seed: u64 },
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct E2eEvalReport {
    pub n: usize,
    /// Mean MRSTFT of process(input_seg, theta) against truth_seg.
    pub model_mrstft: f64,
    /// Mean MRSTFT of the untouched input against truth_seg.
    pub baseline_mrstft: f64,
}

/// Draw pairs for evaluation, retrying settings that gate the signal to
/// silence.
pub fn generate_pairs(
    corpus: &Corpus,
    effect: EffectId,
    n: usize,
    seed: u64,
) -> Result<Vec<PairedExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut made = None;
        for _ in 0..8 {
            match generate_example(corpus, effect, &mut rng) {
                Ok(ex) => {
                    made = Some(ex);
                    break;
                }
                Err(Error::SilentInput) => continue,
                Err(e) => return Err(e),
            }
        }
        out.push(made.ok_or_else(|| {
            Error::DataGenerationFailed("effect output was silent for 8 consecutive draws".into())
        })?);
    }
    Ok(out)
}

pub fn eval_e2e(
    pairs: &[PairedExample],
    effect: EffectId,
    source: &ThetaSource,
    spec: &RunSpec,
    cfg: &MrstftConfig,
) -> Result<E2eEvalReport> {
    assert!(!pairs.is_empty());
    let num_params = dafx::descriptor(effect).num_params();
    let thetas = resolve_thetas(pairs, effect, source, spec)?;

    let (mut model_sum, mut baseline_sum) = (0.0, 0.0);
    for (ex, theta) in pairs.iter().zip(&thetas) {
        let pred = dafx::process_buffer(effect, &ex.input_seg, theta)?;
        model_sum += mrstft(&pred.samples, &ex.truth_seg.samples, cfg)?;
        baseline_sum += mrstft(&ex.input_seg.samples, &ex.truth_seg.samples, cfg)?;
        debug_assert_eq!(theta.len(), num_params);
    }
    Ok(E2eEvalReport {
        n: pairs.len(),
        model_mrstft: model_sum / pairs.len() as f64,
        baseline_mrstft: baseline_sum / pairs.len() as f64,
    })
}

fn resolve_thetas(
    pairs: &[PairedExample],
    effect: EffectId,
    source: &ThetaSource,
    spec: &RunSpec,
) -> Result<Vec<Vec<f32>>> {
    let num_params = dafx::descriptor(effect).num_params();
    match source {
        ThetaSource::Oracle => Ok(pairs.iter().map(|ex| ex.theta.clone()).collect()),
        ThetaSource::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(pairs
                .iter()
                .map(|_| dafx::random_theta(effect, &mut rng))
                .collect())
        }
        ThetaSource::Model {
            vae,
            controller,
            store,
            epsilon,
        } => {
            assert_eq!(controller.num_effect_params, num_params);
            let mut out = Vec::with_capacity(pairs.len());
            for chunk in pairs.chunks(32) {
                let mut in_specs = Vec::with_capacity(chunk.len());
                let mut ref_specs = Vec::with_capacity(chunk.len());
                for ex in chunk {
                    in_specs.push(spec.segment_spectrogram(&ex.input_seg.samples)?);
                    ref_specs.push(spec.segment_spectrogram(&ex.ref_seg.samples)?);
                }
                let emb_in = vae.embed(store, &spectrogram_batch(&to_refs(&in_specs)));
                let emb_ref = vae.embed(store, &spectrogram_batch(&to_refs(&ref_specs)));

                let dim = emb_in.shape()[1];
                let mut conc = crate::nn::Array::<f32>::zeros(&[chunk.len(), 2 * dim]);
                for b in 0..chunk.len() {
                    conc.data_mut()[b * 2 * dim..b * 2 * dim + dim]
                        .copy_from_slice(&emb_in.data()[b * dim..(b + 1) * dim]);
                    conc.data_mut()[b * 2 * dim + dim..(b + 1) * 2 * dim]
                        .copy_from_slice(&emb_ref.data()[b * dim..(b + 1) * dim]);
                }
                let mut g = Graph::<f32>::new();
                let x = g.input(conc);
                let theta_node = controller.forward(&mut g, store, x);
                let theta_val = g.value(theta_node);
                for b in 0..chunk.len() {
                    let mut th =
                        theta_val.data()[b * num_params..(b + 1) * num_params].to_vec();
                    clamp_theta(&mut th, *epsilon);
                    out.push(th);
                }
            }
            Ok(out)
        }
    }
}

fn to_refs(specs: &[Spectrogram]) -> Vec<&Spectrogram> {
    specs.iter().collect()
}

/// Wet patches for `per_effect` random settings of each effect, returned as
/// encoder embeddings plus the flattened spectrograms they came from.
pub fn embedding_dataset(
    vae: &SpectroVae,
    store: &ParamStore<f32>,
    spec: &RunSpec,
    corpus: &Corpus,
    effects: &[EffectId],
    per_effect: usize,
    seed: u64,
) -> Result<(EmbeddingSet, Vec<Vec<f32>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = effects.len() * per_effect;
    let mut flat = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut embeddings = Vec::with_capacity(total);
    let mut pending: Vec<Spectrogram> = Vec::new();

    let flush = |pending: &mut Vec<Spectrogram>, embeddings: &mut Vec<Vec<f64>>| {
        if pending.is_empty() {
            return;
        }
        let emb = vae.embed(store, &spectrogram_batch(&to_refs(pending)));
        let dim = emb.shape()[1];
        for row in 0..pending.len() {
            embeddings.push(
                emb.data()[row * dim..(row + 1) * dim]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
            );
        }
        pending.clear();
    };

    for (label, &effect) in effects.iter().enumerate() {
        for _ in 0..per_effect {
            let wet = crate::trainer::effected_patch(corpus, effect, &mut rng)?;
            let sg = spec.patch_spectrogram(&wet.samples)?;
            flat.push(sg.data.clone());
            labels.push(label);
            pending.push(sg);
            if pending.len() == 16 {
                flush(&mut pending, &mut embeddings);
            }
        }
        flush(&mut pending, &mut embeddings);
    }

    let names = effects.iter().map(|e| e.name().to_string()).collect();
    Ok((
        EmbeddingSet::new(embeddings, labels, None, names),
        flat,
    ))
}

/// Shuffled train/test index split.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!((0.0..1.0).contains(&test_fraction));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let test_len = ((n as f64) * test_fraction).round() as usize;
    let test = idx.split_off(n - test_len);
    (idx, test)
}
