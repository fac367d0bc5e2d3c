//! Run configuration shared by every command, plus its content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curation::RedundancyConfig;
use crate::grpo::GrpoConfig;
use crate::judge::JudgeConfig;
use crate::metrics::NormalizationPolicy;
use crate::rewards::RewardConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub reward: RewardConfig,
    pub redundancy: RedundancyConfig,
    pub grpo: GrpoConfig,
    pub judge: Option<JudgeConfig>,
    pub normalization: NormalizationPolicy,
    pub seed: u64,
    pub strict_parsing: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.redundancy.validate().map_err(ConfigError::Invalid)?;
        self.grpo
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(j) = &self.judge {
            j.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Serialization with sorted keys. Credentials are never included.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config is always serializable");
        serde_json::to_string(&value).expect("value is always serializable")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
