//! End-to-end controller training across the non-differentiable effect, and
//! inference-time style matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_sizes, MetricLog, MetricRow, RunSpec, Split};
use crate::audio::peak_normalize;
use crate::controller::Controller;
use crate::dafx::{self, EffectId};
use crate::datagen::{generate_example, Corpus, PairedExample, NORMALIZE_DBFS};
use crate::error::{Error, Result};
use crate::loss::{e2e_loss, e2e_loss_with_grad, MrstftConfig};
use crate::nn::{clip_global_norm, Adam, Array, Graph, NodeId, ParamStore};
use crate::spsa::{clamp_theta, effect_backward, effect_forward, SpsaConfig};
use crate::vae::{spectrogram_batch, SpectroVae};
use crate::AudioBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct E2eTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub spsa: SpsaConfig,
    /// Keep encoder weights fixed and run embeddings outside the graph.
    pub freeze_encoder: bool,
    /// Fractions of total steps after which the rate drops by 10x each.
    pub lr_drop_points: (f64, f64),
    pub grad_clip: Option<f64>,
    pub mrstft: MrstftConfig,
    pub seed: u64,
}

impl E2eTrainConfig {
    /// Small-scale recipe with a pretrained, frozen encoder.
    pub fn desk(seed: u64) -> Self {
        Self {
            lr: 1e-3,
            epochs: 8,
            train_examples: 128,
            val_examples: 32,
            batch_size: 8,
            alpha: 100.0,
            spsa: SpsaConfig::default(),
            freeze_encoder: true,
            lr_drop_points: (0.8, 0.95),
            grad_clip: None,
            mrstft: MrstftConfig::default(),
            seed,
        }
    }

    /// Joint training from scratch: much lower rate plus gradient clipping.
    pub fn desk_untrained(seed: u64) -> Self {
        Self {
            lr: 3e-5,
            freeze_encoder: false,
            grad_clip: Some(5.0),
            ..Self::desk(seed)
        }
    }

    /// Full-scale recipe with a pretrained, frozen encoder.
    pub fn paper(seed: u64) -> Self {
        Self {
            epochs: 30,
            train_examples: 4000,
            val_examples: 400,
            ..Self::desk(seed)
        }
    }
}

/// Stepped learning-rate schedule: 10x drops at the two configured fractions.
pub fn lr_at(step: usize, total_steps: usize, cfg: &E2eTrainConfig) -> f64 {
    let frac = step as f64 / total_steps.max(1) as f64;
    let mut lr = cfg.lr;
    if frac >= cfg.lr_drop_points.0 {
        lr /= 10.0;
    }
    if frac >= cfg.lr_drop_points.1 {
        lr /= 10.0;
    }
    lr
}

pub struct E2eTrainOutput {
    pub vae: SpectroVae,
    pub controller: Controller,
    pub store: ParamStore<f32>,
    pub log: MetricLog,
}

fn robust_example<R: Rng + ?Sized>(
    corpus: &Corpus,
    effect: EffectId,
    rng: &mut R,
) -> Result<PairedExample> {
    for _ in 0..8 {
        match generate_example(corpus, effect, rng) {
            Ok(ex) => return Ok(ex),
            Err(Error::SilentInput) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DataGenerationFailed(
        "effect output was silent for 8 consecutive draws".into(),
    ))
}

fn concat_rows(a: &Array<f32>, b: &Array<f32>) -> Array<f32> {
    let (ba, da) = (a.shape()[0], a.shape()[1]);
    let (bb, db) = (b.shape()[0], b.shape()[1]);
    assert_eq!(ba, bb, "embedding batch mismatch");
    let mut out = Array::<f32>::zeros(&[ba, da + db]);
    for i in 0..ba {
        out.data_mut()[i * (da + db)..i * (da + db) + da]
            .copy_from_slice(&a.data()[i * da..(i + 1) * da]);
        out.data_mut()[i * (da + db) + da..(i + 1) * (da + db)]
            .copy_from_slice(&b.data()[i * db..(i + 1) * db]);
    }
    out
}

/// Theta for a batch: frozen mode embeds outside the graph so only the
/// controller sees gradients; joint mode runs the shared encoder in-graph.
fn batch_theta(
    g: &mut Graph<f32>,
    vae: &SpectroVae,
    controller: &Controller,
    store: &mut ParamStore<f32>,
    spec: &RunSpec,
    batch: &[PairedExample],
    frozen: bool,
    train_mode: bool,
) -> Result<NodeId> {
    let mut in_specs = Vec::with_capacity(batch.len());
    let mut ref_specs = Vec::with_capacity(batch.len());
    for ex in batch {
        in_specs.push(spec.segment_spectrogram(&ex.input_seg.samples)?);
        ref_specs.push(spec.segment_spectrogram(&ex.ref_seg.samples)?);
    }
    let in_batch = spectrogram_batch(&in_specs.iter().collect::<Vec<_>>());
    let ref_batch = spectrogram_batch(&ref_specs.iter().collect::<Vec<_>>());

    let conc = if frozen {
        let emb_in = vae.embed(store, &in_batch);
        let emb_ref = vae.embed(store, &ref_batch);
        g.input(concat_rows(&emb_in, &emb_ref))
    } else {
        let xin = g.input(in_batch);
        let xref = g.input(ref_batch);
        let (mu_in, mu_ref) = if train_mode {
            let (mu_in, _) = vae.encode_train(g, store, xin);
            let (mu_ref, _) = vae.encode_train(g, store, xref);
            (mu_in, mu_ref)
        } else {
            let (mu_in, _) = vae.encode_infer(g, store, xin);
            let (mu_ref, _) = vae.encode_infer(g, store, xref);
            (mu_in, mu_ref)
        };
        g.concat(mu_in, mu_ref)
    };
    Ok(controller.forward(g, store, conc))
}

pub fn train_e2e(
    cfg: &E2eTrainConfig,
    spec: &RunSpec,
    effect: EffectId,
    encoder: Option<&ParamStore<f32>>,
    corpus: &Corpus,
) -> Result<E2eTrainOutput> {
    assert_eq!(corpus.patch_len, spec.patch_len, "corpus/preset patch mismatch");
    let num_params = dafx::descriptor(effect).num_params();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    let vae = SpectroVae::init(&mut store, &mut init_rng, spec.freq_bins(), spec.frames());
    store.remove_prefix("vae.dec.");
    let controller = Controller::init(&mut store, &mut init_rng, num_params);
    if let Some(enc) = encoder {
        store.copy_prefix_from(enc, "vae.enc.")?;
    }
    if cfg.freeze_encoder {
        store.set_trainable("vae.", false);
    }

    let train_batches = batch_sizes(cfg.train_examples, cfg.batch_size);
    let total_steps = (cfg.epochs * train_batches.len()).max(1);

    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x56414c);
    let mut val_set = Vec::with_capacity(cfg.val_examples);
    for _ in 0..cfg.val_examples {
        val_set.push(robust_example(corpus, effect, &mut val_rng)?);
    }

    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut spsa_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut adam = Adam::<f32>::new(cfg.lr as f32);
    let mut log = MetricLog::new();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let (mut ep_loss, mut ep_mrstft, mut ep_mae) = (0.0, 0.0, 0.0);
        let mut last_lr = cfg.lr;

        for &bsz in &train_batches {
            let mut batch = Vec::with_capacity(bsz);
            for _ in 0..bsz {
                batch.push(robust_example(corpus, effect, &mut train_rng)?);
            }

            let mut g = Graph::<f32>::new();
            let theta_node = batch_theta(
                &mut g,
                &vae,
                &controller,
                &mut store,
                spec,
                &batch,
                cfg.freeze_encoder,
                true,
            )?;
            let theta_val = g.value(theta_node).clone();

            let mut cot = Array::<f32>::zeros(&[bsz, num_params]);
            for (b, ex) in batch.iter().enumerate() {
                let mut th = theta_val.data()[b * num_params..(b + 1) * num_params].to_vec();
                clamp_theta(&mut th, cfg.spsa.epsilon);
                let (pred, tape) = effect_forward(effect, &ex.input_seg, &th)?;
                let (l, upstream) = e2e_loss_with_grad(
                    &pred.samples,
                    &ex.truth_seg.samples,
                    cfg.alpha,
                    &cfg.mrstft,
                )?;
                let dtheta = effect_backward(&upstream, &tape, &cfg.spsa, &mut spsa_rng)?;
                for (p, dv) in dtheta.iter().enumerate() {
                    cot.data_mut()[b * num_params + p] = dv / bsz as f32;
                }
                if !l.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {} at epoch {epoch} step {global_step}",
                        l.total
                    )));
                }
                let frac = 1.0 / cfg.train_examples as f64;
                ep_loss += l.total * frac;
                ep_mrstft += l.mrstft * frac;
                ep_mae += l.mae * frac;
            }

            g.backward_from(theta_node, cot);
            let mut grads = g.param_grads();
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(&mut grads, max_norm as f32);
            }
            last_lr = lr_at(global_step, total_steps, cfg);
            adam.lr = last_lr as f32;
            adam.step(&mut store, &grads);
            global_step += 1;
        }

        log.push(MetricRow {
            epoch,
            step: global_step,
            split: Split::Train,
            loss: ep_loss,
            recon: None,
            kl: None,
            kl_weight: None,
            mrstft: Some(ep_mrstft),
            mae: Some(ep_mae),
            lr: last_lr,
        });

        let val = evaluate(&vae, &controller, &mut store, spec, effect, &val_set, cfg)?;
        log.push(MetricRow {
            epoch,
            step: global_step,
            split: Split::Val,
            loss: val.0,
            recon: None,
            kl: None,
            kl_weight: None,
            mrstft: Some(val.1),
            mae: Some(val.2),
            lr: last_lr,
        });
    }

    Ok(E2eTrainOutput {
        vae,
        controller,
        store,
        log,
    })
}

/// Mean loss of the current controller on a fixed example set. Inference
/// mode throughout; no parameter updates.
pub fn evaluate(
    vae: &SpectroVae,
    controller: &Controller,
    store: &mut ParamStore<f32>,
    spec: &RunSpec,
    effect: EffectId,
    examples: &[PairedExample],
    cfg: &E2eTrainConfig,
) -> Result<(f64, f64, f64)> {
    let num_params = dafx::descriptor(effect).num_params();
    let (mut loss, mut mrstft, mut mae) = (0.0, 0.0, 0.0);
    for chunk in examples.chunks(cfg.batch_size) {
        let mut g = Graph::<f32>::new();
        let theta_node = batch_theta(&mut g, vae, controller, store, spec, chunk, true, false)?;
        let theta_val = g.value(theta_node).clone();
        for (b, ex) in chunk.iter().enumerate() {
            let mut th = theta_val.data()[b * num_params..(b + 1) * num_params].to_vec();
            clamp_theta(&mut th, cfg.spsa.epsilon);
            let pred = dafx::process_buffer(effect, &ex.input_seg, &th)?;
            let l = e2e_loss(&pred.samples, &ex.truth_seg.samples, cfg.alpha, &cfg.mrstft)?;
            let frac = 1.0 / examples.len() as f64;
            loss += l.total * frac;
            mrstft += l.mrstft * frac;
            mae += l.mae * frac;
        }
    }
    Ok((loss, mrstft, mae))
}

pub struct StyleMatch {
    /// Controller output in the normalized space, one value per parameter.
    pub theta: Vec<f32>,
    /// The same parameters in physical units.
    pub physical: Vec<f32>,
    pub output: AudioBuffer,
}

/// Predict effect parameters that make `input` sound like `reference`, then
/// render the full input through the effect with them.
pub fn style_match(
    input: &AudioBuffer,
    reference: &AudioBuffer,
    effect: EffectId,
    vae: &SpectroVae,
    controller: &Controller,
    store: &ParamStore<f32>,
    spec: &RunSpec,
) -> Result<StyleMatch> {
    assert_eq!(
        controller.num_effect_params,
        dafx::descriptor(effect).num_params(),
        "controller width does not match the effect"
    );
    let seg_in = conform_segment(input, spec)?;
    let seg_ref = conform_segment(reference, spec)?;
    let emb_in = vae.embed(store, &spectrogram_batch(&[&seg_in]));
    let emb_ref = vae.embed(store, &spectrogram_batch(&[&seg_ref]));

    let mut g = Graph::<f32>::new();
    let conc = g.input(concat_rows(&emb_in, &emb_ref));
    let theta_node = controller.forward(&mut g, store, conc);
    let theta = g.value(theta_node).data().to_vec();

    let normalized = peak_normalize(input, NORMALIZE_DBFS)?;
    let output = dafx::process_buffer(effect, &normalized, &theta)?;
    let physical = dafx::denormalize(effect, &theta)?;
    Ok(StyleMatch {
        theta,
        physical,
        output,
    })
}

/// Normalize, then cut or tile the signal to one embedding segment.
fn conform_segment(audio: &AudioBuffer, spec: &RunSpec) -> Result<crate::stft::Spectrogram> {
    let normalized = peak_normalize(audio, NORMALIZE_DBFS)?;
    let seg_len = spec.segment_len();
    let seg: Vec<f32> = (0..seg_len)
        .map(|i| normalized.samples[i % normalized.samples.len()])
        .collect();
    spec.segment_spectrogram(&seg)
}

/// Reject checkpoints trained for a different effect.
pub fn check_checkpoint_effect(meta: &serde_json::Value, effect: EffectId) -> Result<()> {
    let trained = meta
        .get("effect")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::CorruptCheckpoint("missing effect in metadata".into()))?;
    if trained != effect.name() {
        return Err(Error::EffectMismatch {
            trained: trained.to_string(),
            requested: effect.name().to_string(),
        });
    }
    Ok(())
}
