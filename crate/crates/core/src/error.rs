use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a provider failure happened in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Rephrase,
    Embed,
    Logits,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Rephrase => "rephrase",
            Stage::Embed => "embed",
            Stage::Logits => "logits",
        })
    }
}

/// Failures while reading an embedding cache file.
#[derive(Debug, Error)]
pub enum CacheError {
    #[error("bad magic bytes {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported cache version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated cache: expected at least {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("row {row} of agent {agent:?} has norm {norm}, expected 1")]
    NormViolation { agent: String, row: usize, norm: f64 },
    #[error("malformed cache: {0}")]
    Malformed(String),
}

impl CacheError {
    pub fn code(&self) -> &'static str {
        match self {
            CacheError::BadMagic { .. } => "cache_bad_magic",
            CacheError::UnsupportedVersion(_) => "cache_unsupported_version",
            CacheError::Truncated { .. } => "cache_truncated",
            CacheError::Checksum { .. } => "cache_checksum",
            CacheError::NormViolation { .. } => "cache_norm_violation",
            CacheError::Malformed(_) => "cache_malformed",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{stage} provider error: {message}")]
    Provider { stage: Stage, message: String },
    #[error("generation failed after {partial:?}: {message}")]
    Generation { partial: Vec<String>, message: String },
    #[error("corpus build failed at batch {batch} (agent {agent:?}): {source}")]
    Build {
        agent: String,
        batch: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("eigensolver did not converge (residual {residual:e})")]
    Numerical { residual: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: CacheError,
    },
}

impl Error {
    /// Stable machine-readable code, used by the HTTP layer and CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidEmbedding(_) => "invalid_embedding",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidPrompt(_) => "invalid_prompt",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Contract(_) => "contract_violation",
            Error::Provider { .. } => "provider_error",
            Error::Generation { .. } => "generation_error",
            Error::Build { .. } => "build_error",
            Error::Numerical { .. } => "numerical_error",
            Error::Io { .. } => "io_error",
            Error::Cache { source, .. } => source.code(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
