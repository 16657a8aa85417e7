//! End-to-end checks of the command-line contract: artifact layouts, exit
//! codes, JSON summaries, determinism. All runs use a miniature geometry so
//! the whole file completes in seconds.

use std::path::Path;
use std::process::{Command, Output};

use fxmatch::audio::AudioBuffer;
use fxmatch::wav;

const BIN: &str = env!("CARGO_BIN_EXE_fxmatch");

const TINY_CONFIG: &str = r#"{
  "patch_len": 4096,
  "stft": {"fft_bins": 512, "window_len": 256, "hop_len": 128},
  "mrstft": {"fft_sizes": [64, 256, 1024]},
  "vae": {"epochs": 2, "train_examples": 8, "val_examples": 2, "effects": ["overdrive", "delay"]},
  "e2e": {"epochs": 1, "train_examples": 4, "val_examples": 2},
  "analysis": {"per_effect": 10, "rf_trees": 10, "mmi_examples": 150, "eval_pairs": 3, "pca_components": 16}
}"#;

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn fxmatch")
}

fn run_ok(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let line = stdout.trim();
    assert!(!line.contains('\n'), "summary must be one line: {line:?}");
    serde_json::from_str(line).expect("summary is JSON")
}

#[test]
fn gen_data_writes_triples_and_a_theta_table() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_tiny_config(tmp.path());
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let summary = run_ok(&[
            "gen-data",
            "--config",
            config.to_str().unwrap(),
            "--effect",
            "overdrive",
            "--count",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(summary["count"], 4);

        let wavs: Vec<_> = std::fs::read_dir(out)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "wav"))
            .collect();
        assert_eq!(wavs.len(), 12, "N=4 means 12 wav files");
        for stem in ["input", "ref", "truth"] {
            for i in 0..4 {
                assert!(out.join(format!("{stem}_{i:04}.wav")).is_file());
            }
        }
        assert!(out.join("thetas.json").is_file());
        assert!(out.join("config.json").is_file(), "config echo missing");
    }

    // same config + seed twice: byte-identical artifacts
    for name in ["input_0002.wav", "truth_0000.wav", "thetas.json"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("thetas.json")).unwrap()).unwrap();
    assert_eq!(table["effect"], "overdrive");
    assert_eq!(table["examples"].as_array().unwrap().len(), 4);
    assert!(table["examples"][0]["physical"].is_array());
}

#[test]
fn unknown_effect_exits_2_naming_the_valid_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-data",
        "--effect",
        "chorus",
        "--count",
        "1",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("chorus"), "{err}");
    assert!(err.contains("overdrive") && err.contains("delay"), "{err}");
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.json");
    std::fs::write(&config, r#"{"vae": {"learning_rate": 0.1}}"#).unwrap();
    let out = run(&[
        "train-vae",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "style-match",
        "--checkpoint",
        tmp.path().join("nope.ckpt").to_str().unwrap(),
        "--input",
        "in.wav",
        "--reference",
        "ref.wav",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn describe_effect_prints_the_parameter_table() {
    let summary = run_ok(&["describe-effect", "delay"]);
    assert_eq!(summary["effect"], "delay");
    let params = summary["params"].as_array().unwrap();
    assert_eq!(params.len(), 5);
    assert!(params.iter().all(|p| p["physical_min"].is_number()));
}

#[test]
fn wav_corpus_is_never_mutated() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus_dir = tmp.path().join("corpus");
    std::fs::create_dir(&corpus_dir).unwrap();
    let tone: Vec<f32> = (0..30000)
        .map(|i| 0.5 * (std::f32::consts::TAU * 220.0 * i as f32 / 24000.0).sin())
        .collect();
    wav::write_wav(&AudioBuffer::new(tone, 24000), &corpus_dir.join("tone.wav")).unwrap();

    let config = write_tiny_config(tmp.path());
    run_ok(&[
        "gen-data",
        "--config",
        config.to_str().unwrap(),
        "--corpus",
        corpus_dir.to_str().unwrap(),
        "--effect",
        "delay",
        "--count",
        "2",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);

    let leftovers: Vec<_> = std::fs::read_dir(&corpus_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers, vec!["tone.wav"], "corpus dir was mutated");
}

#[test]
fn full_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_tiny_config(tmp.path());
    let cfg = config.to_str().unwrap();

    let vae_dir = tmp.path().join("vae");
    let summary = run_ok(&["train-vae", "--config", cfg, "--out", vae_dir.to_str().unwrap()]);
    let vae_ckpt = vae_dir.join("vae.ckpt");
    assert!(vae_ckpt.is_file());
    assert!(vae_dir.join("vae.ckpt.json").is_file());
    assert!(vae_dir.join("metrics.csv").is_file());
    assert!(summary["best_val"].as_f64().unwrap().is_finite());

    let metrics = std::fs::read_to_string(vae_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,step,split,loss,recon,kl,kl_weight,mrstft,mae,lr"));

    let e2e_dir = tmp.path().join("e2e");
    run_ok(&[
        "train-e2e",
        "--config",
        cfg,
        "--effect",
        "overdrive",
        "--encoder",
        vae_ckpt.to_str().unwrap(),
        "--out",
        e2e_dir.to_str().unwrap(),
    ]);
    let e2e_ckpt = e2e_dir.join("e2e.ckpt");
    assert!(e2e_ckpt.is_file());

    let data_dir = tmp.path().join("pairs");
    run_ok(&[
        "gen-data",
        "--config",
        cfg,
        "--effect",
        "overdrive",
        "--count",
        "1",
        "--out",
        data_dir.to_str().unwrap(),
    ]);

    let sm_dir = tmp.path().join("sm");
    let summary = run_ok(&[
        "style-match",
        "--config",
        cfg,
        "--checkpoint",
        e2e_ckpt.to_str().unwrap(),
        "--input",
        data_dir.join("input_0000.wav").to_str().unwrap(),
        "--reference",
        data_dir.join("ref_0000.wav").to_str().unwrap(),
        "--out",
        sm_dir.to_str().unwrap(),
    ]);
    assert!(sm_dir.join("matched.wav").is_file());
    assert_eq!(summary["effect"], "overdrive");
    let params: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sm_dir.join("params.json")).unwrap())
            .unwrap();
    for p in params["params"].as_array().unwrap() {
        let t = p["normalized"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&t));
        assert!(p["physical"].is_number());
    }

    let cls_dir = tmp.path().join("cls");
    let summary = run_ok(&[
        "eval-classifier",
        "--config",
        cfg,
        "--checkpoint",
        vae_ckpt.to_str().unwrap(),
        "--out",
        cls_dir.to_str().unwrap(),
    ]);
    assert!(cls_dir.join("report.json").is_file());
    assert!(cls_dir.join("confusion_embedding.csv").is_file());
    assert!(cls_dir.join("confusion_pca.csv").is_file());
    assert!(summary["embedding_accuracy"].as_f64().unwrap() >= 0.0);

    let mmi_dir = tmp.path().join("mmi");
    run_ok(&[
        "eval-mmi",
        "--config",
        cfg,
        "--checkpoint",
        vae_ckpt.to_str().unwrap(),
        "--effect",
        "overdrive",
        "--out",
        mmi_dir.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(mmi_dir.join("mmi.csv")).unwrap();
    let values: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(values.windows(2).all(|w| w[0] >= w[1]), "rows not sorted by MMI: {values:?}");

    let ee_dir = tmp.path().join("ee");
    let summary = run_ok(&[
        "eval-e2e",
        "--config",
        cfg,
        "--checkpoint",
        e2e_ckpt.to_str().unwrap(),
        "--out",
        ee_dir.to_str().unwrap(),
    ]);
    assert_eq!(summary["pairs"], 3);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ee_dir.join("report.json")).unwrap())
            .unwrap();
    for key in ["model_mrstft", "baseline_mrstft", "random_theta_mrstft"] {
        assert!(report[key].as_f64().unwrap().is_finite(), "{key} not finite");
    }

    // a vae checkpoint is not an e2e checkpoint
    let out = run(&[
        "eval-e2e",
        "--config",
        cfg,
        "--checkpoint",
        vae_ckpt.to_str().unwrap(),
        "--out",
        tmp.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_vae_is_reproducible_across_processes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_tiny_config(tmp.path());
    let cfg = config.to_str().unwrap();
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    for out in [&run_a, &run_b] {
        run_ok(&["train-vae", "--config", cfg, "--seed", "11", "--out", out.to_str().unwrap()]);
    }
    let ckpt_a = std::fs::read(run_a.join("vae.ckpt")).unwrap();
    let ckpt_b = std::fs::read(run_b.join("vae.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ for identical (config, seed)");
    let csv_a = std::fs::read(run_a.join("metrics.csv")).unwrap();
    let csv_b = std::fs::read(run_b.join("metrics.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "metric logs differ for identical (config, seed)");
}
