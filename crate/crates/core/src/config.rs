//! TOML run configuration shared by the CLI and the service.
//!
//! Every section and key is optional; missing values take their defaults.
//! `PERSUADE_PORT` and `PERSUADE_DATA_DIR` override the service port and
//! data directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorConfig;
use crate::error::{Error, Result};
use crate::policy::{DecodingConfig, MleConfig};
use crate::selection::ImitatorTrainConfig;
use crate::trainer::TrainerConfig;

pub const PORT_ENV: &str = "PERSUADE_PORT";
pub const DATA_DIR_ENV: &str = "PERSUADE_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Chat,
    Demo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Holds the demonstration log.
    pub data_dir: PathBuf,
    /// Policy checkpoint; its vocabulary sits next to `corpus`.
    pub model: Option<PathBuf>,
    pub imitator: Option<PathBuf>,
    /// Corpus whose vocabulary the model uses; also the metrics corpus.
    pub corpus: Option<PathBuf>,
    pub default_mode: SessionMode,
    /// Chat sessions open with a system turn.
    pub opening_turn: bool,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            model: None,
            imitator: None,
            corpus: None,
            default_mode: SessionMode::Chat,
            opening_turn: true,
            seed: 0,
        }
    }
}

impl ServiceConfig {
    pub fn demo_log(&self) -> PathBuf {
        self.data_dir.join("demos.jsonl")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mle: MleConfig,
    pub trainer: TrainerConfig,
    pub decoding: DecodingConfig,
    pub detector: DetectorConfig,
    pub imitator: ImitatorTrainConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a file and applies environment overrides; `None` means defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(port) = lookup(PORT_ENV) {
            self.service.port = port
                .parse()
                .map_err(|_| Error::Config(format!("{PORT_ENV}={port:?} is not a port number")))?;
        }
        if let Some(dir) = lookup(DATA_DIR_ENV) {
            self.service.data_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        self.decoding.validate()?;
        if !(self.detector.threshold > 0.0 && self.detector.threshold <= 1.0) {
            return Err(Error::Config("detector.threshold must be in (0, 1]".into()));
        }
        if !(self.mle.learning_rate > 0.0) {
            return Err(Error::Config("mle.learning_rate must be positive".into()));
        }
        if !(self.imitator.val_fraction > 0.0 && self.imitator.val_fraction < 1.0) {
            return Err(Error::Config("imitator.val_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
