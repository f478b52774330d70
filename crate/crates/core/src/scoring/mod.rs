//! Agent scoring and ranking.
//!
//! A query embedding is compared against every row of every agent corpus;
//! each agent's similarity vector is reduced to one score and agents are
//! ranked by score (descending), ties broken by agent id.
//!
//! The default reduction is the logarithm of the generalized power mean,
//!
//! ```text
//! S = (1/p) · ln( (1/n) · Σ sᵢᵖ )
//! ```
//!
//! evaluated entirely in the log domain so that `p = 200` with small
//! similarities neither underflows nor loses precision.

mod eval;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{AgentCorpus, Corpora};
use crate::embedding::{embed_texts, Embedding, RephraseSpec, Rephraser, TextEmbedder, l2_norm};
use crate::error::{Error, Result};

pub use eval::{
    latency_benchmark, score_function_sweep, top_k_accuracy, EvalReport, LatencyReport, SweepRow,
};

pub const DEFAULT_P: f64 = 200.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Max,
    Arithmetic,
    Geometric,
    PMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    /// Power-mean exponent (p-means kind only).
    pub p: f64,
    /// Similarities are clamped to `[epsilon, 1]` before geometric and
    /// p-means aggregation.
    pub epsilon: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self::pmeans(DEFAULT_P)
    }
}

impl ScoreConfig {
    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            p: DEFAULT_P,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn pmeans(p: f64) -> Self {
        Self {
            kind: ScoreKind::PMeans,
            p,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if self.kind == ScoreKind::PMeans && !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidConfig(format!("p-means exponent {} must be positive", self.p)));
        }
        Ok(())
    }

    /// Reduces one agent's similarity vector to its score.
    pub fn score(&self, sims: &[f64]) -> Result<f64> {
        match self.kind {
            ScoreKind::Max => aggregate(sims, Aggregation::Max, self.epsilon),
            ScoreKind::Arithmetic => aggregate(sims, Aggregation::Arithmetic, self.epsilon),
            ScoreKind::Geometric => aggregate(sims, Aggregation::Geometric, self.epsilon),
            ScoreKind::PMeans => score_pmeans(sims, self.p, self.epsilon),
        }
    }
}

impl fmt::Display for ScoreConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScoreKind::Max => f.write_str("max"),
            ScoreKind::Arithmetic => f.write_str("arith"),
            ScoreKind::Geometric => f.write_str("geo"),
            ScoreKind::PMeans => write!(f, "pmeans:{}", self.p),
        }
    }
}

impl FromStr for ScoreConfig {
    type Err = Error;

    /// Accepts `max`, `arith`, `geo`, `pmeans` or `pmeans:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let cfg = match s {
            "max" => Self::new(ScoreKind::Max),
            "arith" | "arithmetic" | "mean" => Self::new(ScoreKind::Arithmetic),
            "geo" | "geometric" => Self::new(ScoreKind::Geometric),
            "pmeans" | "p-means" => Self::pmeans(DEFAULT_P),
            _ => {
                let p = s
                    .strip_prefix("pmeans:")
                    .or_else(|| s.strip_prefix("p-means:"))
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown score function {s:?}")))?;
                Self::pmeans(p)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Plain reductions compared against p-means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Arithmetic,
    Geometric,
}

pub fn aggregate(sims: &[f64], kind: Aggregation, epsilon: f64) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::InvalidInput("no similarities to aggregate".into()));
    }
    let n = sims.len() as f64;
    Ok(match kind {
        Aggregation::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Arithmetic => sims.iter().sum::<f64>() / n,
        Aggregation::Geometric => {
            (sims.iter().map(|&s| s.clamp(epsilon, 1.0).ln()).sum::<f64>() / n).exp()
        }
    })
}

/// Logarithm of the generalized p-mean of the clamped similarities.
///
/// With `m = max sᵢ` and `dᵢ = p·(ln sᵢ − ln m) ≤ 0`,
/// `S = ln m + ln(1 + (1/n)·Σ expm1(dᵢ)) / p`, which is exact in the log
/// domain and stays accurate both for large `p` (no underflow) and for
/// `p → 0` (no cancellation).
pub fn score_pmeans(sims: &[f64], p: f64, epsilon: f64) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::InvalidInput("no similarities to aggregate".into()));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("p-means exponent {p} must be positive")));
    }
    let logs: Vec<f64> = sims.iter().map(|&s| s.clamp(epsilon, 1.0).ln()).collect();
    let log_max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail: f64 = logs.iter().map(|&l| (p * (l - log_max)).exp_m1()).sum::<f64>() / sims.len() as f64;
    Ok(log_max + tail.ln_1p() / p)
}

/// Cosine similarity of `query` against every row of `corpus`.
pub fn similarities(query: &Embedding, corpus: &AgentCorpus) -> Result<Vec<f64>> {
    if query.dim() != corpus.dim() {
        return Err(Error::Contract(format!(
            "query dim {} does not match corpus dim {}",
            query.dim(),
            corpus.dim()
        )));
    }
    let q = query.values();
    let inv_q = 1.0 / l2_norm(q);
    Ok(corpus
        .rows()
        .zip(corpus.inv_norms())
        .map(|(row, inv_r)| {
            let dot: f64 = row.iter().zip(q).map(|(&r, &x)| f64::from(r) * x).sum();
            (dot * inv_q * inv_r).clamp(-1.0, 1.0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAgent {
    pub agent: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub ranked: Vec<RankedAgent>,
    pub k: usize,
    pub rephrased: bool,
}

/// Scores every agent and orders them by (score desc, agent id asc).
pub fn rank_agents(query: &Embedding, corpora: &Corpora, cfg: &ScoreConfig) -> Result<Vec<RankedAgent>> {
    let mut ranked = corpora
        .iter()
        .map(|(agent, corpus)| {
            let sims = similarities(query, corpus)?;
            Ok(RankedAgent {
                agent: agent.clone(),
                score: cfg.score(&sims)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.agent.cmp(&b.agent)));
    Ok(ranked)
}

fn check_corpora(corpora: &Corpora, dim: usize) -> Result<()> {
    if corpora.is_empty() {
        return Err(Error::InvalidInput("no agent corpora loaded".into()));
    }
    if let Some(c) = corpora.values().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: c.dim(),
        });
    }
    Ok(())
}

/// The query path: rephrase, embed, score every agent, keep the top `k`.
#[derive(Clone)]
pub struct Recommender {
    corpora: Arc<Corpora>,
    embedder: Arc<dyn TextEmbedder>,
    rephraser: Rephraser,
    config: ScoreConfig,
}

impl fmt::Debug for Recommender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Recommender")
            .field("agents", &self.corpora.keys().collect::<Vec<_>>())
            .field("dim", &self.embedder.dim())
            .field("config", &self.config)
            .finish()
    }
}

impl Recommender {
    pub fn new(
        corpora: Arc<Corpora>,
        embedder: Arc<dyn TextEmbedder>,
        rephraser: Rephraser,
        config: ScoreConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_corpora(&corpora, embedder.dim())?;
        Ok(Self {
            corpora,
            embedder,
            rephraser,
            config,
        })
    }

    pub fn corpora(&self) -> &Arc<Corpora> {
        &self.corpora
    }

    pub fn embedder(&self) -> &Arc<dyn TextEmbedder> {
        &self.embedder
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.config
    }

    /// Same engine over different corpora.
    pub fn with_corpora(&self, corpora: Arc<Corpora>) -> Result<Self> {
        Self::new(corpora, self.embedder.clone(), self.rephraser.clone(), self.config)
    }

    pub fn recommend(&self, prompt: &str, k: usize) -> Result<Recommendation> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        let prepared = self.rephraser.preprocess(prompt)?;
        let query = embed_texts(self.embedder.as_ref(), &[prepared.text.as_str()])?
            .pop()
            .expect("one embedding per text");
        let mut ranked = rank_agents(&query, &self.corpora, &self.config)?;
        ranked.truncate(k);
        Ok(Recommendation {
            ranked,
            k,
            rephrased: prepared.rephrased,
        })
    }
}

/// One-shot convenience over [`Recommender`].
pub fn recommend(
    prompt: &str,
    corpora: Arc<Corpora>,
    cfg: ScoreConfig,
    rephrase: &RephraseSpec,
    embedder: Arc<dyn TextEmbedder>,
    k: usize,
) -> Result<Recommendation> {
    Recommender::new(corpora, embedder, Rephraser::from_spec(rephrase), cfg)?.recommend(prompt, k)
}
