//! Command-line front end. Every subcommand resolves a config (preset +
//! optional JSON file + flag overrides), echoes the resolved config into its
//! run directory, writes its artifacts there, and prints a one-line JSON
//! summary to stdout. Exit codes: 2 config, 3 data, 4 checkpoint, 5 numeric.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use fxmatch::analysis::{
    classification_report, embedding_dataset, eval_e2e, generate_pairs, mmi_table, pca_fit,
    pca_transform, rf_eval_set, rf_predict, rf_train, rf_train_set, split_indices, ClassReport,
    ForestConfig, ThetaSource,
};
use fxmatch::config::{Preset, RunConfig};
use fxmatch::dafx::{self, EffectId};
use fxmatch::datagen::{generate_example, Corpus};
use fxmatch::error::{Error, Result};
use fxmatch::trainer::{
    load_e2e_checkpoint, load_encoder_checkpoint, load_vae_checkpoint, save_checkpoint,
    style_match, train_e2e, train_vae, RunSpec,
};
use fxmatch::wav;

#[derive(Parser)]
#[command(name = "fxmatch", version, about = "Audio effect style matching toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each one overrides the matching config
/// key when present.
#[derive(Args)]
struct Common {
    /// JSON config file of sparse overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scale preset when the config does not pin one.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of source WAVs (default: built-in synthetic corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run directory for artifacts.
    #[arg(long)]
    out: PathBuf,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    match s {
        "desk" => Ok(Preset::Desk),
        "paper" => Ok(Preset::Paper),
        other => Err(format!("unknown preset `{other}` (valid: desk, paper)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired training examples as WAV triples plus a theta table.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        effect: String,
        #[arg(long)]
        count: usize,
    },
    /// Train the spectrogram autoencoder and save the best-validation weights.
    TrainVae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the parameter controller end to end through one effect.
    TrainE2e {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        effect: String,
        /// Checkpoint supplying pretrained encoder weights.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Keep the encoder fixed (default). `=false` trains it jointly at a
        /// reduced learning rate.
        #[arg(long)]
        freeze_encoder: Option<bool>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict parameters that make the input sound like the reference, and
    /// render the result.
    StyleMatch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Score effect classification from embeddings against a PCA baseline.
    EvalClassifier {
        #[command(flatten)]
        common: Common,
        /// Autoencoder checkpoint supplying the embeddings.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Rank effect parameters by how recoverable they are from embeddings.
    EvalMmi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        effect: String,
        /// Random parameter draws for the sweep.
        #[arg(long)]
        examples: Option<usize>,
    },
    /// Measure matching error on held-out pairs against no-effect and
    /// random-parameter baselines.
    EvalE2e {
        #[command(flatten)]
        common: Common,
        /// End-to-end checkpoint (encoder + controller).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Print an effect's parameter table.
    DescribeEffect {
        effect: String,
        /// Optional run directory; when given, the table is also written as
        /// effect.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Merge flag overrides into the config document so the echoed file alone
/// reproduces the run.
fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = common.preset {
        cfg.preset = p;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(c) = &common.corpus {
        cfg.paths.corpus = Some(c.clone());
    }
    cfg.paths.out_dir = Some(common.out.clone());
    Ok(cfg)
}

fn make_run_dir(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let echo = serde_json::to_string_pretty(cfg).expect("serializable config");
    std::fs::write(out.join("config.json"), echo)?;
    Ok(())
}

fn open_corpus(cfg: &RunConfig, spec: &RunSpec) -> Result<Corpus> {
    match &cfg.paths.corpus {
        Some(dir) => Corpus::from_wav_dir(dir, spec.sample_rate, spec.patch_len),
        None => Ok(Corpus::synthetic(spec.sample_rate, spec.patch_len)),
    }
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, effect, count } => gen_data(&common, &effect, count),
        Command::TrainVae { common, epochs } => cmd_train_vae(&common, epochs),
        Command::TrainE2e {
            common,
            effect,
            encoder,
            freeze_encoder,
            epochs,
        } => cmd_train_e2e(&common, &effect, encoder.as_deref(), freeze_encoder, epochs),
        Command::StyleMatch {
            common,
            checkpoint,
            input,
            reference,
        } => cmd_style_match(&common, &checkpoint, &input, &reference),
        Command::EvalClassifier { common, checkpoint } => cmd_eval_classifier(&common, &checkpoint),
        Command::EvalMmi {
            common,
            checkpoint,
            effect,
            examples,
        } => cmd_eval_mmi(&common, &checkpoint, &effect, examples),
        Command::EvalE2e {
            common,
            checkpoint,
            pairs,
        } => cmd_eval_e2e(&common, &checkpoint, pairs),
        Command::DescribeEffect { effect, out } => cmd_describe_effect(&effect, out.as_deref()),
    }
}

fn effect_json(id: EffectId) -> serde_json::Value {
    let desc = dafx::descriptor(id);
    json!({
        "effect": id.name(),
        "summary": desc.summary,
        "params": desc.params.iter().map(|p| json!({
            "name": p.name,
            "physical_min": p.physical_min,
            "physical_max": p.physical_max,
            "mapping": match p.mapping {
                dafx::Mapping::Linear => "linear",
                dafx::Mapping::Logarithmic => "logarithmic",
            },
            "unit": p.unit,
        })).collect::<Vec<_>>(),
    })
}

fn gen_data(common: &Common, effect: &str, count: usize) -> Result<()> {
    let effect: EffectId = effect.parse()?;
    let cfg = resolve_config(common)?;
    let spec = cfg.run_spec()?;
    make_run_dir(&cfg, &common.out)?;
    let corpus = open_corpus(&cfg, &spec)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut thetas = Vec::with_capacity(count);
    for i in 0..count {
        let mut example = None;
        for _ in 0..8 {
            match generate_example(&corpus, effect, &mut rng) {
                Ok(ex) => {
                    example = Some(ex);
                    break;
                }
                Err(Error::SilentInput) => continue,
                Err(e) => return Err(e),
            }
        }
        let ex = example.ok_or_else(|| {
            Error::DataGenerationFailed("effect output was silent for 8 consecutive draws".into())
        })?;
        wav::write_wav(&ex.input_seg, &common.out.join(format!("input_{i:04}.wav")))?;
        wav::write_wav(&ex.ref_seg, &common.out.join(format!("ref_{i:04}.wav")))?;
        wav::write_wav(&ex.truth_seg, &common.out.join(format!("truth_{i:04}.wav")))?;
        let physical = dafx::denormalize(effect, &ex.theta)?;
        thetas.push(json!({
            "index": i,
            "theta": ex.theta,
            "physical": physical,
        }));
    }
    let table = json!({
        "effect": effect.name(),
        "sample_rate": spec.sample_rate,
        "segment_len": spec.segment_len(),
        "examples": thetas,
    });
    std::fs::write(
        common.out.join("thetas.json"),
        serde_json::to_string_pretty(&table).expect("serializable"),
    )?;
    summary(json!({
        "cmd": "gen-data",
        "effect": effect.name(),
        "count": count,
        "out": common.out.display().to_string(),
    }));
    Ok(())
}

fn cmd_train_vae(common: &Common, epochs: Option<usize>) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    if let Some(n) = epochs {
        cfg.vae.epochs = Some(n);
    }
    let spec = cfg.run_spec()?;
    let train_cfg = cfg.vae_config()?;
    make_run_dir(&cfg, &common.out)?;
    let corpus = open_corpus(&cfg, &spec)?;

    let out = train_vae(&train_cfg, &spec, &corpus)?;
    out.log.write_csv(&common.out.join("metrics.csv"))?;
    let meta = json!({
        "kind": "vae",
        "spec": spec,
        "seed": train_cfg.seed,
        "effects": train_cfg.effects.iter().map(|e| e.name()).collect::<Vec<_>>(),
        "best_epoch": out.best_epoch,
        "best_val": out.best_val,
    });
    let ckpt = common.out.join("vae.ckpt");
    save_checkpoint(&out.store, &meta, &ckpt)?;
    summary(json!({
        "cmd": "train-vae",
        "checkpoint": ckpt.display().to_string(),
        "best_epoch": out.best_epoch,
        "best_val": out.best_val,
    }));
    Ok(())
}

fn cmd_train_e2e(
    common: &Common,
    effect: &str,
    encoder: Option<&Path>,
    freeze_encoder: Option<bool>,
    epochs: Option<usize>,
) -> Result<()> {
    let effect: EffectId = effect.parse()?;
    let mut cfg = resolve_config(common)?;
    if let Some(f) = freeze_encoder {
        cfg.e2e.freeze_encoder = Some(f);
    }
    if let Some(n) = epochs {
        cfg.e2e.epochs = Some(n);
    }
    let spec = cfg.run_spec()?;
    let train_cfg = cfg.e2e_config(None);
    make_run_dir(&cfg, &common.out)?;
    let corpus = open_corpus(&cfg, &spec)?;

    let encoder_store = match encoder {
        Some(path) => {
            let (store, enc_spec, _) = load_encoder_checkpoint(path)?;
            if enc_spec != spec {
                return Err(Error::CorruptCheckpoint(format!(
                    "encoder was trained at a different geometry ({} x {} spectrogram)",
                    enc_spec.freq_bins(),
                    enc_spec.frames(),
                )));
            }
            Some(store)
        }
        None => None,
    };

    let out = train_e2e(&train_cfg, &spec, effect, encoder_store.as_ref(), &corpus)?;
    out.log.write_csv(&common.out.join("metrics.csv"))?;
    let best_val = out.log.best_val().map(|(_, loss)| loss);
    let meta = json!({
        "kind": "e2e",
        "spec": spec,
        "effect": effect.name(),
        "seed": train_cfg.seed,
        "freeze_encoder": train_cfg.freeze_encoder,
        "pretrained_encoder": encoder.is_some(),
    });
    let ckpt = common.out.join("e2e.ckpt");
    save_checkpoint(&out.store, &meta, &ckpt)?;
    summary(json!({
        "cmd": "train-e2e",
        "effect": effect.name(),
        "checkpoint": ckpt.display().to_string(),
        "freeze_encoder": train_cfg.freeze_encoder,
        "best_val": best_val,
    }));
    Ok(())
}

fn cmd_style_match(
    common: &Common,
    checkpoint: &Path,
    input: &Path,
    reference: &Path,
) -> Result<()> {
    let cfg = resolve_config(common)?;
    let (vae, controller, store, spec, effect, _meta) = load_e2e_checkpoint(checkpoint)?;
    make_run_dir(&cfg, &common.out)?;

    let input_buf = wav::read_wav(input, spec.sample_rate)?;
    let reference_buf = wav::read_wav(reference, spec.sample_rate)?;
    let matched = style_match(
        &input_buf,
        &reference_buf,
        effect,
        &vae,
        &controller,
        &store,
        &spec,
    )?;

    let out_wav = common.out.join("matched.wav");
    wav::write_wav(&matched.output, &out_wav)?;
    let desc = dafx::descriptor(effect);
    let params = json!({
        "effect": effect.name(),
        "params": desc.params.iter().zip(matched.theta.iter().zip(&matched.physical)).map(
            |(p, (&t, &phys))| json!({
                "name": p.name,
                "normalized": t,
                "physical": phys,
                "unit": p.unit,
            })
        ).collect::<Vec<_>>(),
    });
    std::fs::write(
        common.out.join("params.json"),
        serde_json::to_string_pretty(&params).expect("serializable"),
    )?;
    summary(json!({
        "cmd": "style-match",
        "effect": effect.name(),
        "matched": out_wav.display().to_string(),
        "theta": matched.theta,
    }));
    Ok(())
}

fn write_confusion_csv(report: &ClassReport, labels: &[String], path: &Path) -> Result<()> {
    let mut text = String::from("truth\\pred");
    for name in labels {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for (row, name) in report.confusion.iter().zip(labels) {
        text.push_str(name);
        for &n in row {
            text.push_str(&format!(",{n}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_eval_classifier(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let (vae, store, spec, _meta) = load_vae_checkpoint(checkpoint)?;
    make_run_dir(&cfg, &common.out)?;
    let corpus = open_corpus(&cfg, &spec)?;

    let effects = EffectId::training();
    let (set, flat) = embedding_dataset(
        &vae,
        &store,
        &spec,
        &corpus,
        &effects,
        cfg.classifier_per_effect(),
        cfg.seed,
    )?;
    let (train_idx, test_idx) = split_indices(set.len(), cfg.test_fraction(), cfg.seed);
    let forest_cfg = ForestConfig {
        num_trees: cfg.rf_trees(),
        max_depth: cfg.rf_depth(),
        seed: cfg.seed,
    };

    let train_set = set.subset(&train_idx);
    let test_set = set.subset(&test_idx);
    let forest = rf_train_set(&train_set, &forest_cfg)?;
    let emb_report = rf_eval_set(&forest, &test_set);

    // PCA baseline on the flattened spectrograms the encoder saw
    let train_flat: Vec<Vec<f32>> = train_idx.iter().map(|&i| flat[i].clone()).collect();
    let test_flat: Vec<Vec<f32>> = test_idx.iter().map(|&i| flat[i].clone()).collect();
    let components = cfg
        .pca_components()
        .min(train_flat.len().saturating_sub(1))
        .min(train_flat[0].len());
    let pca = pca_fit(&train_flat, components);
    let pca_train = pca_transform(&pca, &train_flat);
    let pca_test = pca_transform(&pca, &test_flat);
    let pca_forest = rf_train(&pca_train, &train_set.labels, &forest_cfg)?;
    let pca_pred = rf_predict(&pca_forest, &pca_test);
    let pca_report = classification_report(&test_set.labels, &pca_pred, effects.len());

    let report = json!({
        "labels": set.label_names,
        "train_examples": train_idx.len(),
        "test_examples": test_idx.len(),
        "chance_accuracy": 1.0 / effects.len() as f64,
        "embedding": &emb_report,
        "pca_components": components,
        "pca": &pca_report,
    });
    std::fs::write(
        common.out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    write_confusion_csv(
        &emb_report,
        &set.label_names,
        &common.out.join("confusion_embedding.csv"),
    )?;
    write_confusion_csv(
        &pca_report,
        &set.label_names,
        &common.out.join("confusion_pca.csv"),
    )?;
    summary(json!({
        "cmd": "eval-classifier",
        "embedding_accuracy": emb_report.accuracy,
        "embedding_macro_f1": emb_report.macro_f1,
        "pca_accuracy": pca_report.accuracy,
    }));
    Ok(())
}

fn cmd_eval_mmi(
    common: &Common,
    checkpoint: &Path,
    effect: &str,
    examples: Option<usize>,
) -> Result<()> {
    let effect: EffectId = effect.parse()?;
    let mut cfg = resolve_config(common)?;
    if let Some(n) = examples {
        cfg.analysis.mmi_examples = Some(n);
    }
    let (vae, store, spec, _meta) = load_vae_checkpoint(checkpoint)?;
    make_run_dir(&cfg, &common.out)?;
    let corpus = open_corpus(&cfg, &spec)?;

    // one fixed audio datapoint for the whole sweep
    let mut audio_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let audio = corpus.sample_patch(&mut audio_rng)?;
    let mut sweep_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let entries = mmi_table(
        effect,
        &vae,
        &store,
        &spec,
        &audio,
        cfg.mmi_examples(),
        &mut sweep_rng,
    )?;

    let mut csv = String::from("param,mmi_nats\n");
    for e in &entries {
        csv.push_str(&format!("{},{:.6}\n", e.param, e.mmi));
    }
    std::fs::write(common.out.join("mmi.csv"), csv)?;
    summary(json!({
        "cmd": "eval-mmi",
        "effect": effect.name(),
        "examples": cfg.mmi_examples(),
        "table": entries,
    }));
    Ok(())
}

fn cmd_eval_e2e(common: &Common, checkpoint: &Path, pairs: Option<usize>) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    if let Some(n) = pairs {
        cfg.analysis.eval_pairs = Some(n);
    }
    let (vae, controller, store, spec, effect, _meta) = load_e2e_checkpoint(checkpoint)?;
    make_run_dir(&cfg, &common.out)?;
    let corpus = open_corpus(&cfg, &spec)?;

    let held_out = generate_pairs(&corpus, effect, cfg.eval_pairs(), cfg.seed)?;
    let mrstft_cfg = cfg.mrstft_config();
    let model = eval_e2e(
        &held_out,
        effect,
        &ThetaSource::Model {
            vae: &vae,
            controller: &controller,
            store: &store,
            epsilon: cfg.spsa_config().epsilon,
        },
        &spec,
        &mrstft_cfg,
    )?;
    let random = eval_e2e(
        &held_out,
        effect,
        &ThetaSource::Random {
            seed: cfg.seed.wrapping_add(1),
        },
        &spec,
        &mrstft_cfg,
    )?;

    let report = json!({
        "effect": effect.name(),
        "pairs": model.n,
        "model_mrstft": model.model_mrstft,
        "baseline_mrstft": model.baseline_mrstft,
        "random_theta_mrstft": random.model_mrstft,
    });
    std::fs::write(
        common.out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    summary(json!({
        "cmd": "eval-e2e",
        "effect": effect.name(),
        "pairs": model.n,
        "model_mrstft": model.model_mrstft,
        "baseline_mrstft": model.baseline_mrstft,
        "random_theta_mrstft": random.model_mrstft,
    }));
    Ok(())
}

fn cmd_describe_effect(effect: &str, out: Option<&Path>) -> Result<()> {
    let effect: EffectId = effect.parse()?;
    let description = effect_json(effect);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("effect.json"),
            serde_json::to_string_pretty(&description).expect("serializable"),
        )?;
    }
    summary(description);
    Ok(())
}
