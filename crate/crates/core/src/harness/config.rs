use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compositionality::TreConfig;
use crate::datasets::{PreprocessConfig, SyntheticSpec};
use crate::encoders::{EncoderSpec, Family};
use crate::error::{Error, Result};
use crate::mi::MineConfig;
use crate::pretraining::TrainConfig;
use crate::probes::ProbeConfig;
use crate::zsl::ProtoConfig;

/// Environment variable naming the directory that holds real datasets.
pub const DATA_ROOT_ENV: &str = "ZSL_DATA_ROOT";

pub const SYNTHETIC: &str = "synthetic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub family: Family,
    /// Channel and hidden widths are divided by this.
    pub width_div: usize,
    /// Global feature width; `None` keeps the family default.
    pub global_dim: Option<usize>,
    /// Side images are resized to before cropping.
    pub resize: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            family: Family::Basic,
            width_div: 1,
            global_dim: None,
            resize: 128,
        }
    }
}

impl EncoderConfig {
    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig::with_resize(self.resize)
    }

    pub fn spec(&self) -> Result<EncoderSpec> {
        let base = EncoderSpec::for_family(self.family);
        let gdim = self.global_dim.unwrap_or(base.global_dim);
        let spec = if self.width_div == 1 && self.global_dim.is_none() {
            base.with_input_size(self.preprocess().crop)
        } else {
            base.scaled(self.width_div.max(1), gdim, self.preprocess().crop)
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Everything one run reads; its canonical TOML text is fingerprinted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub seed: u64,
    pub zfs_strict: bool,
    /// Caps every optimisation loop at this many steps when set.
    pub device_budget: Option<usize>,
    pub encoder: EncoderConfig,
    pub synthetic: SyntheticSpec,
    pub train: TrainConfig,
    pub proto: ProtoConfig,
    pub probe: ProbeConfig,
    pub mine: MineConfig,
    pub tre: TreConfig,
    pub tre_draws: usize,
    pub study_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SYNTHETIC.into(),
            seed: 0,
            zfs_strict: true,
            device_budget: None,
            encoder: EncoderConfig::default(),
            synthetic: SyntheticSpec::default(),
            train: TrainConfig::default(),
            proto: ProtoConfig::default(),
            probe: ProbeConfig::default(),
            mine: MineConfig::default(),
            tre: TreConfig::default(),
            tre_draws: 3,
            study_pairs: 20_000,
        }
    }
}

impl ExperimentConfig {
    /// Small encoder and budgets that run on one CPU core in minutes.
    pub fn desk() -> Self {
        let mut c = Self {
            encoder: EncoderConfig {
                family: Family::Basic,
                width_div: 8,
                global_dim: Some(128),
                resize: 64,
            },
            study_pairs: 2000,
            ..Default::default()
        };
        c.train.steps = 300;
        c.train.lr = 1e-3;
        c.proto.steps = 500;
        c.proto.embed_dim = 128;
        c.proto.hidden = 256;
        c.probe.lr = 1e-3;
        c.probe.steps = 500;
        c.mine.hidden = 128;
        c.mine.lr = 1e-3;
        c.mine.steps = 1000;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Seeds, budgets and the preprocessing are propagated into the
    /// sub-configurations.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c.proto.seed = c.seed;
        c.probe.seed = c.seed;
        c.mine.seed = c.seed;
        c.tre.seed = c.seed;
        c.train.preprocess = c.encoder.preprocess();
        if let Some(b) = c.device_budget {
            c.train.steps = c.train.steps.min(b);
            c.proto.steps = c.proto.steps.min(b);
            c.probe.steps = c.probe.steps.min(b);
            c.mine.steps = c.mine.steps.min(b);
            c.tre.max_steps = c.tre.max_steps.min(b);
        }
        c
    }

    pub fn to_canonical(&self) -> Result<String> {
        toml::to_string(&self.resolved()).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML text.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_canonical()?.as_bytes())))
    }
}

/// Dataset root from the environment, if set.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}
