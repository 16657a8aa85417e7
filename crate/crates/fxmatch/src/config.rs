//! Run configuration: a JSON document of sparse overrides layered on top of a
//! named preset. Every field is optional; anything unset falls back to the
//! preset default, and unknown keys are rejected rather than ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::MrstftConfig;
use crate::spsa::SpsaConfig;
use crate::stft::StftConfig;
use crate::trainer::{E2eTrainConfig, RunSpec, VaeTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Directory of source WAVs. Unset means the built-in synthetic corpus.
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub fft_bins: Option<usize>,
    pub window_len: Option<usize>,
    pub hop_len: Option<usize>,
    pub compression_exponent: Option<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSection {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub train_examples: Option<usize>,
    pub val_examples: Option<usize>,
    pub batch_size: Option<usize>,
    pub num_cycles: Option<usize>,
    pub ramp_fraction: Option<f64>,
    pub beta_max: Option<f64>,
    /// Effect rotation for the reconstruction curriculum, by name.
    pub effects: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2eSection {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub train_examples: Option<usize>,
    pub val_examples: Option<usize>,
    pub batch_size: Option<usize>,
    pub alpha: Option<f64>,
    pub freeze_encoder: Option<bool>,
    pub lr_drop_points: Option<(f64, f64)>,
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaSection {
    pub epsilon: Option<f32>,
    pub num_draws: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrstftSection {
    pub fft_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Effected patches per class when building classifier datasets.
    pub per_effect: Option<usize>,
    pub test_fraction: Option<f64>,
    pub rf_trees: Option<usize>,
    pub rf_depth: Option<usize>,
    /// Dimensionality of the PCA baseline features.
    pub pca_components: Option<usize>,
    /// Random-theta draws for the parameter sensitivity table.
    pub mmi_examples: Option<usize>,
    /// Held-out pairs for end-to-end evaluation.
    pub eval_pairs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Samples per training patch; halves into the paired-example segments.
    pub patch_len: Option<usize>,
    pub paths: PathsSection,
    pub stft: StftSection,
    pub vae: VaeSection,
    pub e2e: E2eSection,
    pub spsa: SpsaSection,
    pub mrstft: MrstftSection,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        let mut spec = match self.preset {
            Preset::Desk => RunSpec::desk(),
            Preset::Paper => RunSpec::paper(),
        };
        spec.patch_len = self.patch_len.unwrap_or(spec.patch_len);
        let s = &self.stft;
        let fft_bins = s.fft_bins.unwrap_or(spec.stft.fft_bins);
        let window_len = s.window_len.unwrap_or(spec.stft.window_len);
        let hop_len = s.hop_len.unwrap_or(spec.stft.hop_len);
        let exponent = s.compression_exponent.unwrap_or(spec.stft.compression_exponent);
        let consistent = hop_len > 0
            && hop_len <= window_len
            && window_len <= fft_bins
            && exponent > 0.0
            && spec.patch_len >= window_len
            && spec.patch_len % 2 == 0
            && spec.patch_len / 2 >= window_len;
        if !consistent {
            return Err(Error::Config(format!(
                "inconsistent geometry: patch_len {} with stft {fft_bins}/{window_len}/{hop_len}",
                spec.patch_len
            )));
        }
        spec.stft = StftConfig::new(fft_bins, window_len, hop_len, exponent);
        Ok(spec)
    }

    pub fn vae_config(&self) -> Result<VaeTrainConfig> {
        let mut cfg = match self.preset {
            Preset::Desk => VaeTrainConfig::desk(self.seed),
            Preset::Paper => VaeTrainConfig::paper(self.seed),
        };
        let v = &self.vae;
        cfg.lr = v.lr.unwrap_or(cfg.lr);
        cfg.epochs = v.epochs.unwrap_or(cfg.epochs);
        cfg.train_examples = v.train_examples.unwrap_or(cfg.train_examples);
        cfg.val_examples = v.val_examples.unwrap_or(cfg.val_examples);
        cfg.batch_size = v.batch_size.unwrap_or(cfg.batch_size);
        cfg.num_cycles = v.num_cycles.unwrap_or(cfg.num_cycles);
        cfg.ramp_fraction = v.ramp_fraction.unwrap_or(cfg.ramp_fraction);
        cfg.beta_max = v.beta_max.unwrap_or(cfg.beta_max);
        if let Some(names) = &v.effects {
            cfg.effects = names
                .iter()
                .map(|n| n.parse())
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(cfg)
    }

    /// `freeze_flag` is a command-line override; precedence is flag, then
    /// config, then the default of true. Unfreezing switches the learning
    /// rate and gradient-clip defaults to the cautious joint-training values
    /// unless the config pins them explicitly.
    pub fn e2e_config(&self, freeze_flag: Option<bool>) -> E2eTrainConfig {
        let freeze = freeze_flag
            .or(self.e2e.freeze_encoder)
            .unwrap_or(true);
        let mut cfg = match (self.preset, freeze) {
            (Preset::Desk, true) => E2eTrainConfig::desk(self.seed),
            (Preset::Desk, false) => E2eTrainConfig::desk_untrained(self.seed),
            (Preset::Paper, true) => E2eTrainConfig::paper(self.seed),
            (Preset::Paper, false) => E2eTrainConfig {
                freeze_encoder: false,
                ..E2eTrainConfig::paper(self.seed)
            },
        };
        if !freeze && self.preset == Preset::Paper {
            let cautious = E2eTrainConfig::desk_untrained(self.seed);
            cfg.lr = cautious.lr;
            cfg.grad_clip = cautious.grad_clip;
        }
        let e = &self.e2e;
        cfg.lr = e.lr.unwrap_or(cfg.lr);
        cfg.epochs = e.epochs.unwrap_or(cfg.epochs);
        cfg.train_examples = e.train_examples.unwrap_or(cfg.train_examples);
        cfg.val_examples = e.val_examples.unwrap_or(cfg.val_examples);
        cfg.batch_size = e.batch_size.unwrap_or(cfg.batch_size);
        cfg.alpha = e.alpha.unwrap_or(cfg.alpha);
        cfg.lr_drop_points = e.lr_drop_points.unwrap_or(cfg.lr_drop_points);
        cfg.grad_clip = e.grad_clip.or(cfg.grad_clip);
        cfg.spsa = self.spsa_config();
        cfg.mrstft = self.mrstft_config();
        cfg
    }

    pub fn spsa_config(&self) -> SpsaConfig {
        let base = SpsaConfig::default();
        SpsaConfig {
            epsilon: self.spsa.epsilon.unwrap_or(base.epsilon),
            num_draws: self.spsa.num_draws.unwrap_or(base.num_draws),
        }
    }

    pub fn mrstft_config(&self) -> MrstftConfig {
        match &self.mrstft.fft_sizes {
            Some(sizes) => MrstftConfig {
                fft_sizes: sizes.clone(),
            },
            None => MrstftConfig::default(),
        }
    }

    pub fn classifier_per_effect(&self) -> usize {
        self.analysis.per_effect.unwrap_or(200)
    }

    pub fn test_fraction(&self) -> f64 {
        self.analysis.test_fraction.unwrap_or(0.15)
    }

    pub fn rf_trees(&self) -> usize {
        self.analysis.rf_trees.unwrap_or(100)
    }

    pub fn rf_depth(&self) -> usize {
        self.analysis.rf_depth.unwrap_or(16)
    }

    pub fn pca_components(&self) -> usize {
        self.analysis.pca_components.unwrap_or(128)
    }

    pub fn mmi_examples(&self) -> usize {
        self.analysis.mmi_examples.unwrap_or(10_000)
    }

    pub fn eval_pairs(&self) -> usize {
        self.analysis.eval_pairs.unwrap_or(200)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_matches_desk_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.preset, Preset::Desk);
        assert_eq!(cfg.seed, 0);

        let spec = cfg.run_spec().unwrap();
        assert_eq!(spec, RunSpec::desk());

        let vae = cfg.vae_config().unwrap();
        assert_eq!(vae, VaeTrainConfig::desk(0));

        let e2e = cfg.e2e_config(None);
        assert_eq!(e2e, E2eTrainConfig::desk(0));
        assert!(e2e.freeze_encoder);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"vae": {"learning_rate": 0.1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn inconsistent_geometry_is_a_config_error() {
        let cfg = RunConfig::from_json(r#"{"stft": {"hop_len": 0}}"#).unwrap();
        assert!(matches!(cfg.run_spec(), Err(Error::Config(_))));
        let cfg = RunConfig::from_json(r#"{"patch_len": 100}"#).unwrap();
        assert!(matches!(cfg.run_spec(), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = RunConfig::from_json(
            r#"{
                "preset": "desk",
                "seed": 7,
                "stft": {"fft_bins": 512, "window_len": 256, "hop_len": 128},
                "vae": {"epochs": 2, "beta_max": 0.5},
                "e2e": {"lr": 0.002},
                "spsa": {"num_draws": 4},
                "mrstft": {"fft_sizes": [64, 256]}
            }"#,
        )
        .unwrap();

        let spec = cfg.run_spec().unwrap();
        assert_eq!(spec.stft.fft_bins, 512);
        assert_eq!(spec.stft.compression_exponent, 0.3);
        assert_eq!(spec.patch_len, RunSpec::desk().patch_len);

        let vae = cfg.vae_config().unwrap();
        assert_eq!(vae.epochs, 2);
        assert_eq!(vae.beta_max, 0.5);
        assert_eq!(vae.lr, VaeTrainConfig::desk(0).lr);
        assert_eq!(vae.seed, 7);

        let e2e = cfg.e2e_config(None);
        assert_eq!(e2e.lr, 0.002);
        assert_eq!(e2e.spsa.num_draws, 4);
        assert_eq!(e2e.mrstft.fft_sizes, vec![64, 256]);
    }

    #[test]
    fn effect_rotation_parses_by_name() {
        use crate::dafx::EffectId;
        let cfg = RunConfig::from_json(r#"{"vae": {"effects": ["overdrive", "delay"]}}"#).unwrap();
        let vae = cfg.vae_config().unwrap();
        assert_eq!(vae.effects, vec![EffectId::Overdrive, EffectId::Delay]);
        let bad = RunConfig::from_json(r#"{"vae": {"effects": ["zzz"]}}"#).unwrap();
        assert!(matches!(bad.vae_config(), Err(Error::UnknownEffect(..))));
    }

    #[test]
    fn unfreezing_switches_to_cautious_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        let joint = cfg.e2e_config(Some(false));
        assert!(!joint.freeze_encoder);
        assert_eq!(joint.lr, 3e-5);
        assert_eq!(joint.grad_clip, Some(5.0));

        let pinned = RunConfig::from_json(r#"{"e2e": {"lr": 0.01}}"#).unwrap();
        let joint = pinned.e2e_config(Some(false));
        assert_eq!(joint.lr, 0.01);

        let flag_beats_config = RunConfig::from_json(r#"{"e2e": {"freeze_encoder": false}}"#).unwrap();
        assert!(!flag_beats_config.e2e_config(None).freeze_encoder);
        assert!(flag_beats_config.e2e_config(Some(true)).freeze_encoder);
    }

}
