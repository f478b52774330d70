use std::path::{Path, PathBuf};

use agentrec_core::{EmbeddingProviderSpec, RephraseSpec, ScoreConfig};
use anyhow::{bail, Context};
use serde::{Deserialize, Deserializer, Serialize};

pub const ENV_PREFIX: &str = "AGENTREC_";

/// Service and pipeline settings. Sources, later wins: defaults, TOML file,
/// `AGENTREC_*` environment variables, command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub provider: EmbeddingProviderSpec,
    pub rephrase: RephraseSpec,
    #[serde(deserialize_with = "score_from_name_or_table")]
    pub score: ScoreConfig,
    pub cache_path: PathBuf,
    pub listen_address: String,
    pub default_k: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProviderSpec::default(),
            rephrase: RephraseSpec::default(),
            score: ScoreConfig::default(),
            cache_path: PathBuf::from("agentrec.cache"),
            listen_address: "127.0.0.1:8080".into(),
            default_k: 3,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoreSetting {
    Name(String),
    Table(ScoreConfig),
}

fn score_from_name_or_table<'de, D: Deserializer<'de>>(d: D) -> Result<ScoreConfig, D::Error> {
    match ScoreSetting::deserialize(d)? {
        ScoreSetting::Name(name) => name.parse().map_err(serde::de::Error::custom),
        ScoreSetting::Table(cfg) => Ok(cfg),
    }
}

/// Per-key overrides, as given on the command line or in the environment.
/// Provider and rephrase specs are inline JSON or TOML tables.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub provider: Option<String>,
    pub rephrase: Option<String>,
    pub score: Option<String>,
    pub cache_path: Option<PathBuf>,
    pub listen_address: Option<String>,
    pub default_k: Option<usize>,
}

impl Overrides {
    pub fn from_env() -> anyhow::Result<Self> {
        Self::from_lookup(|key| std::env::var(format!("{ENV_PREFIX}{key}")).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        Ok(Self {
            provider: get("PROVIDER"),
            rephrase: get("REPHRASE"),
            score: get("SCORE"),
            cache_path: get("CACHE_PATH").map(PathBuf::from),
            listen_address: get("LISTEN_ADDRESS"),
            default_k: get("DEFAULT_K")
                .map(|k| k.parse().with_context(|| format!("{ENV_PREFIX}DEFAULT_K={k:?} is not an integer")))
                .transpose()?,
        })
    }

    fn apply(self, cfg: &mut EngineConfig) -> anyhow::Result<()> {
        if let Some(p) = self.provider {
            cfg.provider = parse_inline(&p).context("provider")?;
        }
        if let Some(r) = self.rephrase {
            cfg.rephrase = parse_inline(&r).context("rephrase")?;
        }
        if let Some(s) = self.score {
            cfg.score = s.parse()?;
        }
        if let Some(path) = self.cache_path {
            cfg.cache_path = path;
        }
        if let Some(addr) = self.listen_address {
            cfg.listen_address = addr;
        }
        if let Some(k) = self.default_k {
            cfg.default_k = k;
        }
        Ok(())
    }
}

fn parse_inline<T: serde::de::DeserializeOwned>(text: &str) -> anyhow::Result<T> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).with_context(|| format!("invalid JSON {text:?}"));
    }
    toml::from_str(text).with_context(|| format!("invalid inline TOML {text:?}"))
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then `file`, then each override set in order.
    pub fn resolve(file: Option<&Path>, layers: impl IntoIterator<Item = Overrides>) -> anyhow::Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Self::default(),
        };
        for layer in layers {
            layer.apply(&mut cfg)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.default_k == 0 {
            bail!("default_k must be at least 1");
        }
        if self.provider.dim() == 0 {
            bail!("provider dim must be positive");
        }
        self.score.validate()?;
        Ok(())
    }
}
