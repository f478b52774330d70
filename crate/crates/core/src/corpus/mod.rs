//! Prompt datasets, per-agent embedding corpora, and their on-disk cache.

mod cache;
mod split;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{embed_texts, normalize_whitespace, Embedding, TextEmbedder, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};

pub use cache::{encode_cache, decode_cache, load_corpus_cache, save_corpus_cache, CACHE_MAGIC, CACHE_VERSION};
pub use split::{split_dataset, DatasetSplits, SplitRatios};

/// One labeled single-sentence prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub agent: String,
    pub text: String,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, agent: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            agent: agent.into(),
            text: text.into(),
        }
    }
}

/// Checks ids are unique, texts non-empty, and (when given) agents registered.
/// Returns the records with whitespace-normalized text.
pub fn validate_dataset(records: Vec<PromptRecord>, registry: Option<&[String]>) -> Result<Vec<PromptRecord>> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .map(|mut r| {
            if r.id.is_empty() {
                return Err(Error::InvalidInput("prompt with empty id".into()));
            }
            if !seen.insert(r.id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate prompt id {:?}", r.id)));
            }
            if r.agent.is_empty() {
                return Err(Error::InvalidInput(format!("prompt {:?} has no agent", r.id)));
            }
            if let Some(reg) = registry {
                if !reg.contains(&r.agent) {
                    return Err(Error::InvalidInput(format!(
                        "prompt {:?} labeled with unregistered agent {:?}",
                        r.id, r.agent
                    )));
                }
            }
            r.text = normalize_whitespace(&r.text);
            if r.text.is_empty() {
                return Err(Error::InvalidInput(format!("prompt {:?} has empty text", r.id)));
            }
            Ok(r)
        })
        .collect()
}

/// Cached embeddings of one agent's representative prompts, stored as a
/// row-major `f32` matrix.
#[derive(Debug, Clone)]
pub struct AgentCorpus {
    agent: String,
    dim: usize,
    rows: Vec<f32>,
    prompt_ids: Vec<String>,
    // 1/‖row‖ in f64, so cosine stays exact to f64 despite f32 storage
    inv_norms: Vec<f64>,
}

impl AgentCorpus {
    pub fn new(agent: impl Into<String>, dim: usize, rows: Vec<f32>, prompt_ids: Vec<String>) -> Result<Self> {
        let agent = agent.into();
        if dim == 0 {
            return Err(Error::InvalidInput("corpus dim must be positive".into()));
        }
        if prompt_ids.is_empty() {
            return Err(Error::InvalidInput(format!("corpus for {agent:?} is empty")));
        }
        if rows.len() != prompt_ids.len() * dim {
            return Err(Error::InvalidInput(format!(
                "corpus for {agent:?}: {} values for {} rows of dim {dim}",
                rows.len(),
                prompt_ids.len()
            )));
        }
        let mut inv_norms = Vec::with_capacity(prompt_ids.len());
        for (i, row) in rows.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidEmbedding(format!("{agent:?} row {i} is not finite")));
            }
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidEmbedding(format!(
                    "{agent:?} row {i} has norm {norm}"
                )));
            }
            inv_norms.push(1.0 / norm);
        }
        Ok(Self {
            agent,
            dim,
            rows,
            prompt_ids,
            inv_norms,
        })
    }

    pub fn from_embeddings(agent: impl Into<String>, embeddings: &[Embedding], prompt_ids: Vec<String>) -> Result<Self> {
        let dim = embeddings.first().map(Embedding::dim).unwrap_or(0);
        if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        let rows = embeddings
            .iter()
            .flat_map(|e| e.values().iter().map(|&v| v as f32))
            .collect();
        Self::new(agent, dim, rows, prompt_ids)
    }

    pub fn agent(&self) -> &str {
        &self.agent
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompt_ids.is_empty()
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    /// Flat row-major payload.
    pub fn payload(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.rows.chunks_exact(self.dim)
    }

    pub(crate) fn inv_norms(&self) -> &[f64] {
        &self.inv_norms
    }
}

impl PartialEq for AgentCorpus {
    fn eq(&self, other: &Self) -> bool {
        self.agent == other.agent
            && self.dim == other.dim
            && self.prompt_ids == other.prompt_ids
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Agent id → corpus, iterated in agent-id order.
pub type Corpora = BTreeMap<String, AgentCorpus>;

/// Embeds up to `per_agent_limit` prompts per agent (in input order), one
/// provider call per agent.
pub fn build_agent_corpora(
    prompts: &[PromptRecord],
    embedder: &dyn TextEmbedder,
    per_agent_limit: Option<usize>,
) -> Result<Corpora> {
    if per_agent_limit == Some(0) {
        return Err(Error::InvalidConfig("per-agent limit must be positive".into()));
    }
    let mut grouped: BTreeMap<&str, Vec<&PromptRecord>> = BTreeMap::new();
    for p in prompts {
        let group = grouped.entry(p.agent.as_str()).or_default();
        if per_agent_limit.is_none_or(|limit| group.len() < limit) {
            group.push(p);
        }
    }
    let mut corpora = Corpora::new();
    for (batch, (agent, records)) in grouped.into_iter().enumerate() {
        if records.is_empty() {
            log::warn!("agent {agent:?} has no prompts; skipped");
            continue;
        }
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        let embeddings = embed_texts(embedder, &texts).map_err(|e| Error::Build {
            agent: agent.to_owned(),
            batch,
            source: Box::new(e),
        })?;
        let ids = records.iter().map(|r| r.id.clone()).collect();
        corpora.insert(agent.to_owned(), AgentCorpus::from_embeddings(agent, &embeddings, ids)?);
    }
    Ok(corpora)
}
