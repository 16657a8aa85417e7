//! Spectrogram VAE training: random-theta wet patches, cyclic KL annealing,
//! best-validation checkpointing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_sizes, fill_standard_normal, MetricLog, MetricRow, RunSpec, Split};
use crate::audio::peak_normalize;
use crate::dafx::{self, EffectId};
use crate::datagen::{Corpus, NORMALIZE_DBFS};
use crate::error::{Error, Result};
use crate::loss::{kl_weight, KlScheduleConfig};
use crate::nn::{Adam, Array, Graph, ParamStore};
use crate::stft::Spectrogram;
use crate::vae::{spectrogram_batch, vae_loss, SpectroVae, LATENT_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct VaeTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub batch_size: usize,
    pub effects: Vec<EffectId>,
    pub num_cycles: usize,
    pub ramp_fraction: f64,
    pub beta_max: f64,
    pub seed: u64,
}

impl VaeTrainConfig {
    /// Small-scale recipe sized for a single CPU core.
    pub fn desk(seed: u64) -> Self {
        Self {
            lr: 5e-4,
            epochs: 6,
            train_examples: 96,
            val_examples: 16,
            batch_size: 8,
            effects: EffectId::training().to_vec(),
            num_cycles: 4,
            ramp_fraction: 0.5,
            beta_max: 0.02,
            seed,
        }
    }

    /// Full-scale recipe.
    pub fn paper(seed: u64) -> Self {
        Self {
            lr: 5e-4,
            epochs: 500,
            train_examples: 2500,
            val_examples: 250,
            batch_size: 8,
            effects: EffectId::training().to_vec(),
            num_cycles: 4,
            ramp_fraction: 0.5,
            beta_max: 0.02,
            seed,
        }
    }
}

pub struct VaeTrainOutput {
    pub vae: SpectroVae,
    /// Weights from the epoch with the lowest validation loss.
    pub store: ParamStore<f32>,
    pub log: MetricLog,
    pub best_val: f64,
    pub best_epoch: usize,
}

/// Draw a patch, process it with random parameters, and normalize. Heavily
/// gated settings can silence the output entirely; retry with fresh draws.
pub(crate) fn effected_patch<R: Rng + ?Sized>(
    corpus: &Corpus,
    effect: EffectId,
    rng: &mut R,
) -> Result<crate::AudioBuffer> {
    for _ in 0..8 {
        let margined = corpus.sample_margined(rng)?;
        let patch = crate::datagen::augment(&margined, corpus.patch_len, rng);
        let theta = dafx::random_theta(effect, rng);
        let wet = dafx::process_buffer(effect, &patch, &theta)?;
        match peak_normalize(&wet, NORMALIZE_DBFS) {
            Ok(buf) => return Ok(buf),
            Err(Error::SilentInput) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DataGenerationFailed(
        "effect output was silent for 8 consecutive draws".into(),
    ))
}

fn wet_spectrogram<R: Rng + ?Sized>(
    corpus: &Corpus,
    spec: &RunSpec,
    effect: EffectId,
    rng: &mut R,
) -> Result<Spectrogram> {
    let wet = effected_patch(corpus, effect, rng)?;
    spec.patch_spectrogram(&wet.samples)
}

pub fn train_vae(cfg: &VaeTrainConfig, spec: &RunSpec, corpus: &Corpus) -> Result<VaeTrainOutput> {
    assert!(!cfg.effects.is_empty(), "need at least one training effect");
    assert_eq!(corpus.patch_len, spec.patch_len, "corpus/preset patch mismatch");

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    let vae = SpectroVae::init(&mut store, &mut init_rng, spec.freq_bins(), spec.frames());

    let train_batches = batch_sizes(cfg.train_examples, cfg.batch_size);
    let schedule = KlScheduleConfig {
        total_steps: (cfg.epochs * train_batches.len()).max(1),
        num_cycles: cfg.num_cycles,
        ramp_fraction: cfg.ramp_fraction,
        beta_max: cfg.beta_max,
    };

    // One fixed validation set spanning the effect rotation, so epoch losses
    // stay comparable.
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x56414c);
    let mut val_specs = Vec::with_capacity(cfg.val_examples);
    for i in 0..cfg.val_examples {
        let effect = cfg.effects[i % cfg.effects.len()];
        val_specs.push(wet_spectrogram(corpus, spec, effect, &mut val_rng)?);
    }

    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut adam = Adam::<f32>::new(cfg.lr as f32);
    let mut log = MetricLog::new();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let effect = cfg.effects[epoch % cfg.effects.len()];
        let (mut ep_loss, mut ep_recon, mut ep_kl, mut ep_w) = (0.0, 0.0, 0.0, 0.0);

        for &bsz in &train_batches {
            let mut batch = Vec::with_capacity(bsz);
            for _ in 0..bsz {
                batch.push(wet_spectrogram(corpus, spec, effect, &mut train_rng)?);
            }
            let refs: Vec<&Spectrogram> = batch.iter().collect();
            let x = spectrogram_batch(&refs);
            let mut eps = Array::<f32>::zeros(&[bsz, LATENT_DIM]);
            fill_standard_normal(&mut noise_rng, eps.data_mut());
            let w = kl_weight(global_step, &schedule) as f32;

            let mut g = Graph::<f32>::new();
            let xin = g.input(x);
            let (mu, logvar) = vae.encode_train(&mut g, &mut store, xin);
            let eps_node = g.input(eps);
            let z = vae.reparameterize(&mut g, mu, logvar, eps_node);
            let recon = vae.decode_train(&mut g, &mut store, z);
            let loss = vae_loss(&mut g, recon, xin, mu, logvar, w);
            let total = g.value(loss.total).item();
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {total} at epoch {epoch} step {global_step}"
                )));
            }
            g.backward(loss.total);
            adam.step(&mut store, &g.param_grads());

            let frac = bsz as f64 / cfg.train_examples as f64;
            ep_loss += total as f64 * frac;
            ep_recon += g.value(loss.recon).item() as f64 * frac;
            ep_kl += g.value(loss.kl).item() as f64 * frac;
            ep_w += w as f64 * frac;
            global_step += 1;
        }

        log.push(MetricRow {
            epoch,
            step: global_step,
            split: Split::Train,
            loss: ep_loss,
            recon: Some(ep_recon),
            kl: Some(ep_kl),
            kl_weight: Some(ep_w),
            mrstft: None,
            mae: None,
            lr: cfg.lr,
        });

        let (val_loss, val_recon, val_kl) = validate(&vae, &store, &val_specs, cfg)?;
        log.push(MetricRow {
            epoch,
            step: global_step,
            split: Split::Val,
            loss: val_loss,
            recon: Some(val_recon),
            kl: Some(val_kl),
            kl_weight: Some(cfg.beta_max),
            mrstft: None,
            mae: None,
            lr: cfg.lr,
        });

        if best.as_ref().map_or(true, |(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, store.clone()));
        }
    }

    let (best_epoch, best_val, best_store) =
        best.unwrap_or((0, f64::INFINITY, store));
    Ok(VaeTrainOutput {
        vae,
        store: best_store,
        log,
        best_val,
        best_epoch,
    })
}

/// Deterministic validation: inference-mode stats, z = mu, KL weighted at
/// beta_max so the number is comparable across epochs.
fn validate(
    vae: &SpectroVae,
    store: &ParamStore<f32>,
    val_specs: &[Spectrogram],
    cfg: &VaeTrainConfig,
) -> Result<(f64, f64, f64)> {
    let (mut loss, mut recon, mut kl) = (0.0, 0.0, 0.0);
    let total = val_specs.len();
    for chunk in val_specs.chunks(cfg.batch_size) {
        let refs: Vec<&Spectrogram> = chunk.iter().collect();
        let x = spectrogram_batch(&refs);
        let mut g = Graph::<f32>::new();
        let xin = g.input(x);
        let (mu, logvar) = vae.encode_infer(&mut g, store, xin);
        let out = vae.decode_infer(&mut g, store, mu);
        let l = vae_loss(&mut g, out, xin, mu, logvar, cfg.beta_max as f32);
        let frac = chunk.len() as f64 / total as f64;
        loss += g.value(l.total).item() as f64 * frac;
        recon += g.value(l.recon).item() as f64 * frac;
        kl += g.value(l.kl).item() as f64 * frac;
    }
    Ok((loss, recon, kl))
}
