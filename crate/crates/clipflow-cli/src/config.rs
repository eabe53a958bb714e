//! Shared TOML config file. Each subcommand reads its own section; flags
//! always win over file values, and the `CLIPFLOW_SEED` environment
//! variable supplies a seed only when neither a flag nor the file names
//! one.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use clipflow_core::{GenerationConfig, Thresholds, TrainConfig};

pub const SEED_ENV_VAR: &str = "CLIPFLOW_SEED";

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EmotionSection {
    pub frame_rate: Option<f64>,
    pub subsegment_frames: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub filter: Option<String>,
    pub seed: Option<u64>,
}

/// The typed view of a config file, plus which sections spelled out their
/// own seed (so the environment variable can stay a default and nothing
/// more).
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub verify: Option<VerifySection>,
    pub train: Option<TrainConfig>,
    pub simulate: Option<GenerationConfig>,
    pub pipeline: Option<Thresholds>,
    pub emotion: Option<EmotionSection>,
    train_names_seed: bool,
    simulate_names_seed: bool,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawSections {
    verify: Option<VerifySection>,
    train: Option<TrainConfig>,
    simulate: Option<GenerationConfig>,
    pipeline: Option<Thresholds>,
    emotion: Option<EmotionSection>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let typed: RawSections = toml::from_str(&text)
            .with_context(|| format!("config file {} is invalid", path.display()))?;
        let raw: toml::Value = toml::from_str(&text).expect("parsed once already");
        let names_seed = |section: &str| {
            raw.get(section).and_then(|s| s.get("seed")).is_some()
        };
        Ok(Self {
            verify: typed.verify,
            train: typed.train,
            simulate: typed.simulate,
            pipeline: typed.pipeline,
            emotion: typed.emotion,
            train_names_seed: names_seed("train"),
            simulate_names_seed: names_seed("simulate"),
        })
    }

    pub fn train_names_seed(&self) -> bool {
        self.train_names_seed
    }

    pub fn simulate_names_seed(&self) -> bool {
        self.simulate_names_seed
    }
}

/// Seed taken from the environment, if any.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => match text.trim().parse::<u64>() {
            Ok(v) => Ok(Some(v)),
            Err(_) => bail!("{SEED_ENV_VAR} must be an unsigned integer, got {text:?}"),
        },
        Err(_) => Ok(None),
    }
}

/// Resolve a seed: explicit flag, then a file-provided value, then the
/// environment, then the built-in default.
pub fn resolve_seed(
    flag: Option<u64>,
    file_value: Option<u64>,
    default: u64,
) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file_value {
        return Ok(s);
    }
    if let Some(s) = env_seed()? {
        return Ok(s);
    }
    Ok(default)
}
