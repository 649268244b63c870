//! Engine configuration: a versioned TOML tree covering ingestion,
//! retrieval, judge weights, and the embedder and provider backends.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MemoraError, Result};
use crate::ingest::{IngestConfig, Segmenter};
use crate::policy::ScoreWeights;
use crate::provider::DEFAULT_SEED;
use crate::retrieval::RetrievalConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderConfig {
    /// Deterministic hashing embedder; needs no network.
    Test { dims: usize },
    /// Remote embedding endpoint.
    External { endpoint: String, model: String },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self::Test { dims: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderConfig {
    /// No chat provider: deterministic stubs curate and judge.
    None,
    External {
        endpoint: String,
        model: String,
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default)]
        temperature: f64,
    },
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::None
    }
}

impl ProviderConfig {
    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub config_version: u32,
    pub ingest: IngestConfig,
    pub retrieval: RetrievalConfig,
    pub weights: ScoreWeights,
    pub embedder: EmbedderConfig,
    pub provider: ProviderConfig,
    /// Snapshot location the engine loads at startup and saves on
    /// export; absent means a fresh in-memory store.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store_path: Option<PathBuf>,
    /// Directory of prompt template overrides; absent means the
    /// built-in assets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            ingest: IngestConfig::default(),
            retrieval: RetrievalConfig::default(),
            weights: ScoreWeights::default(),
            embedder: EmbedderConfig::default(),
            provider: ProviderConfig::default(),
            store_path: None,
            prompt_dir: None,
        }
    }
}

impl EngineConfig {
    /// Structural checks that need no filesystem access.
    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(MemoraError::Config(format!(
                "unsupported config_version {} (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        self.ingest.validate()?;
        self.retrieval.validate()?;
        self.weights.validate()?;
        match &self.embedder {
            EmbedderConfig::Test { dims } => {
                if *dims == 0 {
                    return Err(MemoraError::Config("embedder dims must be >= 1".into()));
                }
            }
            EmbedderConfig::External { endpoint, model } => {
                if endpoint.trim().is_empty() || model.trim().is_empty() {
                    return Err(MemoraError::Config(
                        "external embedder needs endpoint and model".into(),
                    ));
                }
            }
        }
        match &self.provider {
            ProviderConfig::None => {
                if self.ingest.segmenter == Segmenter::Provider {
                    return Err(MemoraError::Config(
                        "provider segmenter requires an external provider".into(),
                    ));
                }
            }
            ProviderConfig::External {
                endpoint,
                model,
                temperature,
                ..
            } => {
                if endpoint.trim().is_empty() || model.trim().is_empty() {
                    return Err(MemoraError::Config(
                        "external provider needs endpoint and model".into(),
                    ));
                }
                if !temperature.is_finite() || *temperature < 0.0 {
                    return Err(MemoraError::Config(
                        "provider temperature must be a nonnegative number".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| MemoraError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| MemoraError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse and validate a config file, then check that every referenced
/// path is resolvable: an existing prompt directory and, for the
/// snapshot, an existing parent to write into.
pub fn load_config(path: &Path) -> Result<EngineConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = EngineConfig::from_toml(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(dir) = &cfg.prompt_dir {
        if !resolve(base, dir).is_dir() {
            return Err(MemoraError::Config(format!(
                "prompt_dir {} is not a directory",
                dir.display()
            )));
        }
    }
    if let Some(store) = &cfg.store_path {
        let resolved = resolve(base, store);
        let parent = resolved.parent().unwrap_or(Path::new("."));
        if !parent.as_os_str().is_empty() && !parent.is_dir() {
            return Err(MemoraError::Config(format!(
                "store_path parent {} does not exist",
                parent.display()
            )));
        }
    }
    Ok(cfg)
}

/// Interpret a configured path relative to the config file's directory.
pub fn resolve(base: &Path, configured: &Path) -> PathBuf {
    if configured.is_absolute() {
        configured.to_path_buf()
    } else {
        base.join(configured)
    }
}
