//! Chain configuration, read from JSON with the field names below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::lora::{DEFAULT_RANK, DEFAULT_WEIGHT_SCALING};
use crate::diffusion::TrainConfig;
use crate::guidance::GuidancePolicy;
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub real_mix_fraction: f64,
    pub images_per_prompt: usize,
    pub input_noise_sigma: f64,
    pub freeze_embed: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            real_mix_fraction: 0.0,
            images_per_prompt: 1,
            input_noise_sigma: 0.0,
            freeze_embed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSettings {
    pub rank: usize,
    pub weight_scaling: f64,
}

impl Default for LoraSettings {
    fn default() -> Self {
        LoraSettings {
            rank: DEFAULT_RANK,
            weight_scaling: DEFAULT_WEIGHT_SCALING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub k_iterations: usize,
    pub n: usize,
    pub guidance: GuidancePolicy,
    pub train: TrainConfig,
    pub scenario: Scenario,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub lora: LoraSettings,
    /// Directory written by `pretrain`; only read by the CLI.
    pub pretrained_dir: PathBuf,
    /// Saved original set; when absent the CLI renders a target set of `n`
    /// glyphs from `seed`.
    pub d0_dir: Option<PathBuf>,
    /// Seed of the frozen feature extractor.
    pub metrics_seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            k_iterations: 6,
            n: 512,
            guidance: GuidancePolicy::default(),
            train: TrainConfig::default(),
            scenario: Scenario::default(),
            seed: 0,
            output_dir: PathBuf::from("runs/chain"),
            lora: LoraSettings::default(),
            pretrained_dir: PathBuf::from("pretrained"),
            d0_dir: None,
            metrics_seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn freeze_embed(&self) -> bool {
        self.train.freeze_embed || self.scenario.freeze_embed
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ITERATIONS).contains(&self.k_iterations) {
            return Err(Error::config(format!(
                "k_iterations {} outside [1, {MAX_ITERATIONS}]",
                self.k_iterations
            )));
        }
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        self.guidance.validate()?;
        self.train.validate()?;
        let s = &self.scenario;
        if !(0.0..=1.0).contains(&s.real_mix_fraction) {
            return Err(Error::config(format!(
                "real_mix_fraction {} outside [0, 1]",
                s.real_mix_fraction
            )));
        }
        if s.images_per_prompt == 0 {
            return Err(Error::config("images_per_prompt must be at least 1"));
        }
        if s.images_per_prompt > 1 && s.real_mix_fraction > 0.0 {
            return Err(Error::config(
                "real mixing needs index-aligned sets; use images_per_prompt = 1",
            ));
        }
        if !(s.input_noise_sigma >= 0.0 && s.input_noise_sigma.is_finite()) {
            return Err(Error::config("input_noise_sigma must be finite and >= 0"));
        }
        if self.lora.rank == 0 || !(self.lora.weight_scaling.is_finite()) {
            return Err(Error::config("lora rank must be >= 1 with finite scaling"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::GuidanceMode;

    #[test]
    fn defaults_and_partial_json() {
        let cfg =
            ChainConfig::from_json(r#"{"seed": 3, "guidance": {"mode": "exp_schedule"}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.k_iterations, 6);
        assert_eq!(cfg.n, 512);
        assert_eq!(cfg.guidance.mode, GuidanceMode::ExpSchedule);
        assert_eq!(cfg.guidance.s0, 7.5);
        assert_eq!(cfg.scenario.images_per_prompt, 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn full_round_trip() {
        let cfg = ChainConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        for key in [
            "k_iterations",
            "n",
            "guidance",
            "mode",
            "s0",
            "alpha",
            "t_sample",
            "train",
            "learning_rate",
            "epochs",
            "batch",
            "cond_drop_prob",
            "clip_norm",
            "freeze_embed",
            "scenario",
            "real_mix_fraction",
            "images_per_prompt",
            "input_noise_sigma",
            "seed",
            "output_dir",
        ] {
            assert!(text.contains(&format!("\"{key}\"")), "{key}");
        }
        assert_eq!(ChainConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ChainConfig::from_json(r#"{"k_iteration": 6}"#).is_err());
        let mut cfg = ChainConfig::default();
        cfg.scenario.real_mix_fraction = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = ChainConfig {
            k_iterations: 13,
            ..ChainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ChainConfig::default();
        cfg.scenario.images_per_prompt = 0;
        assert!(cfg.validate().is_err());
    }
}
