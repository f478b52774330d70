//! Accuracy evaluation, score-function sweeps and latency measurement.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_corpora, rank_agents, Recommender, ScoreConfig};
use crate::corpus::{Corpora, PromptRecord};
use crate::embedding::{embed_texts, Embedding, Rephraser, TextEmbedder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// k → fraction of prompts whose label is among the first k agents.
    pub accuracy: BTreeMap<usize, f64>,
    /// true agent → top-1 predicted agent → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub n_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: ScoreConfig,
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub n: usize,
}

fn validate_eval(corpora: &Corpora, labeled: &[PromptRecord], ks: &[usize], dim: usize) -> Result<()> {
    check_corpora(corpora, dim)?;
    if labeled.is_empty() {
        return Err(Error::InvalidInput("no labeled prompts to evaluate".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidInput("ks must be a non-empty list of positive integers".into()));
    }
    if let Some(p) = labeled.iter().find(|p| !corpora.contains_key(&p.agent)) {
        return Err(Error::InvalidInput(format!(
            "prompt {:?} has unregistered label {:?}",
            p.id, p.agent
        )));
    }
    Ok(())
}

fn evaluate_embedded(
    corpora: &Corpora,
    labeled: &[PromptRecord],
    queries: &[Embedding],
    cfg: &ScoreConfig,
    ks: &[usize],
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (prompt, query) in labeled.iter().zip(queries) {
        let ranked = rank_agents(query, corpora, cfg)?;
        let position = ranked.iter().position(|r| r.agent == prompt.agent);
        for (&k, count) in hits.iter_mut() {
            if position.is_some_and(|pos| pos < k) {
                *count += 1;
            }
        }
        *confusion
            .entry(prompt.agent.clone())
            .or_default()
            .entry(ranked[0].agent.clone())
            .or_default() += 1;
    }
    let n = labeled.len();
    Ok(EvalReport {
        accuracy: hits.into_iter().map(|(k, h)| (k, h as f64 / n as f64)).collect(),
        confusion,
        n_evaluated: n,
    })
}

/// Top-k accuracy of `cfg` on labeled prompts.
pub fn top_k_accuracy(
    corpora: &Corpora,
    labeled: &[PromptRecord],
    cfg: &ScoreConfig,
    embedder: &dyn TextEmbedder,
    ks: &[usize],
) -> Result<EvalReport> {
    validate_eval(corpora, labeled, ks, embedder.dim())?;
    let queries = embed_texts(embedder, &labeled.iter().map(|p| p.text.as_str()).collect::<Vec<_>>())?;
    evaluate_embedded(corpora, labeled, &queries, cfg, ks)
}

/// Evaluates several score functions on the same prompts (embedded once).
pub fn score_function_sweep(
    corpora: &Corpora,
    labeled: &[PromptRecord],
    embedder: &dyn TextEmbedder,
    configs: &[ScoreConfig],
    ks: &[usize],
) -> Result<Vec<SweepRow>> {
    if configs.is_empty() {
        return Err(Error::InvalidInput("no score functions to sweep".into()));
    }
    validate_eval(corpora, labeled, ks, embedder.dim())?;
    let queries = embed_texts(embedder, &labeled.iter().map(|p| p.text.as_str()).collect::<Vec<_>>())?;
    configs
        .iter()
        .map(|cfg| {
            Ok(SweepRow {
                config: *cfg,
                label: cfg.to_string(),
                report: evaluate_embedded(corpora, labeled, &queries, cfg, ks)?,
            })
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Wall-clock latency of full `recommend` calls with identity rephrasing.
/// One warm-up pass over `prompts` runs before measurement; `repetitions`
/// passes are then timed.
pub fn latency_benchmark(
    corpora: Arc<Corpora>,
    prompts: &[String],
    cfg: ScoreConfig,
    embedder: Arc<dyn TextEmbedder>,
    repetitions: usize,
) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    if prompts.is_empty() {
        return Err(Error::InvalidInput("no prompts to benchmark".into()));
    }
    let engine = Recommender::new(corpora, embedder, Rephraser::identity(), cfg)?;
    for prompt in prompts {
        std::hint::black_box(engine.recommend(prompt, 1)?);
    }
    let mut times = Vec::with_capacity(prompts.len() * repetitions);
    for _ in 0..repetitions {
        for prompt in prompts {
            let start = Instant::now();
            std::hint::black_box(engine.recommend(prompt, 1)?);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        p50_ms: percentile(&times, 0.50),
        p95_ms: percentile(&times, 0.95),
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        n: times.len(),
    })
}
