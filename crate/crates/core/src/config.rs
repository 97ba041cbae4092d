//! The single JSON run configuration shared by every subcommand.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::auxnet::{preset, MimicPath, Provider, ProviderKind};
use crate::data::{generate_split, Dataset, PrepConfig, ScenarioParams};
use crate::error::{Error, Result};
use crate::evaluator::rows_for_preset;
use crate::mainnet::MainNetConfig;
use crate::seed;
use crate::trainer::{MimicTargets, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_sequences: usize,
    pub val_sequences: usize,
    /// Raw frames rendered per sequence.
    pub raw_frames: usize,
    pub prep: PrepConfig,
    /// Provider used to write the `aux_*` sidecars at generation time.
    pub sidecar_provider: ProviderKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_sequences: 8,
            val_sequences: 2,
            raw_frames: 200,
            prep: PrepConfig::default(),
            sidecar_provider: ProviderKind::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub preset: String,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            preset: "paths".into(),
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds data generation and training.
    pub seed: u64,
    pub scenario: ScenarioParams,
    pub data: DataConfig,
    pub net: MainNetConfig,
    pub train: TrainConfig,
    /// Target-dims preset of the mimicking paths: `desk`, `udacity` or
    /// `commaai`.
    pub path_preset: String,
    /// Provider of auxiliary features during training.
    pub provider: ProviderKind,
    pub ablation: AblationConfig,
    /// Output directory, overridable from the command line.
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioParams::default(),
            data: DataConfig::default(),
            net: MainNetConfig::default(),
            train: TrainConfig::default(),
            path_preset: "desk".into(),
            provider: ProviderKind::Fixture,
            ablation: AblationConfig::default(),
            out: None,
        }
    }
}

impl RunConfig {
    /// Parse and validate. Malformed JSON or unknown keys are usage errors;
    /// inconsistent values are configuration errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::usage(format!("config: {e}")))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.data.prep.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.data.prep.clip_len != self.net.clip_len {
            return Err(Error::config(format!(
                "data.prep.clip_len ({}) must equal net.clip_len ({})",
                self.data.prep.clip_len, self.net.clip_len
            )));
        }
        if self.data.prep.out_hw != self.net.input_hw {
            return Err(Error::config(format!(
                "data.prep.out_hw {:?} must equal net.input_hw {:?}",
                self.data.prep.out_hw, self.net.input_hw
            )));
        }
        if self.data.sidecar_provider == ProviderKind::Fixture {
            return Err(Error::config("data.sidecar_provider must compute features (oracle or frozen-random)"));
        }
        let paths = self.all_paths()?;
        for id in &self.train.paths {
            if !paths.iter().any(|p| p.id == *id) {
                return Err(Error::config(format!("train.paths: {id} not in preset {:?}", self.path_preset)));
            }
        }
        rows_for_preset(&self.ablation.preset)?;
        Ok(())
    }

    /// All six paths of the preset with beta taken from the loss weights.
    pub fn all_paths(&self) -> Result<Vec<MimicPath>> {
        let mut paths = preset(&self.path_preset)?;
        for p in &mut paths {
            p.beta = self.train.weights.beta_of(p.id.kind);
        }
        Ok(paths)
    }

    /// The enabled paths of `train.paths`.
    pub fn enabled_paths(&self) -> Result<Vec<MimicPath>> {
        let all = self.all_paths()?;
        Ok(all
            .into_iter()
            .filter(|p| self.train.paths.contains(&p.id))
            .collect())
    }

    /// Render the train and validation splits and attach auxiliary sidecars
    /// for every path of the preset.
    pub fn generate_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let paths = self.all_paths()?;
        let provider = Provider::new(d.sidecar_provider, seed::derive(self.seed, seed::tag("aux")), &paths)?;
        let split = |first, count| -> Result<Dataset> {
            let mut clips = generate_split(self.seed, &self.scenario, &d.prep, d.raw_frames, first, count)?;
            for clip in &mut clips {
                clip.aux = provider.provide(clip, &paths)?;
            }
            Ok(Dataset::new(clips))
        };
        Ok((split(0, d.train_sequences)?, split(d.train_sequences, d.val_sequences)?))
    }

    /// Ψ-side targets for every path of the preset from the training
    /// provider.
    pub fn mimic_targets(&self, train: &Dataset) -> Result<Arc<MimicTargets>> {
        let paths = self.all_paths()?;
        let provider = Provider::new(self.provider, seed::derive(self.seed, seed::tag("aux")), &paths)?;
        Ok(Arc::new(MimicTargets::build(&provider, train, &paths)?))
    }
}
