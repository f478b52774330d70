//! Decoding transforms used to synthesize prompt datasets: repetition
//! penalty, temperature softmax, top-k and nucleus truncation, and a
//! generation loop over any next-token logit source.
//!
//! Transform order per step: penalty on raw logits, temperature softmax,
//! top-k, then nucleus on the top-k-renormalized distribution. Ties in the
//! truncation ranking go to the lower token index.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::DEFAULT_TIMEOUT_MS;
use crate::error::{Error, Result, Stage};
use crate::http::JsonClient;

const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    /// Token indices by descending probability, lower index first on ties.
    fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }

    /// Zeroes everything outside `keep` and rescales the survivors.
    fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let mass: f64 = keep.iter().map(|&i| self.probs[i]).sum();
        if mass <= 0.0 {
            return Err(Error::InvalidInput("no probability mass to keep".into()));
        }
        if keep.iter().filter(|&&i| self.probs[i] > 0.0).count() == self.support_size() {
            return Ok(self.clone());
        }
        let mut probs = vec![0.0; self.probs.len()];
        for &i in keep {
            probs[i] = self.probs[i] / mass;
        }
        Ok(Self { probs })
    }
}

/// Softmax of `logits / temperature` with max subtraction.
pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<TokenDistribution> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logits".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(TokenDistribution {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Divides positive logits of already-seen tokens by `penalty` and
/// multiplies non-positive ones by it.
pub fn apply_repetition_penalty(
    logits: &[f64],
    history: &BTreeSet<usize>,
    penalty: f64,
) -> Result<Vec<f64>> {
    if !(penalty >= 1.0 && penalty.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "repetition penalty must be >= 1, got {penalty}"
        )));
    }
    let mut out = logits.to_vec();
    for &tok in history {
        let slot = out.get_mut(tok).ok_or_else(|| {
            Error::Contract(format!(
                "history token {tok} outside vocabulary of {}",
                logits.len()
            ))
        })?;
        *slot = if *slot > 0.0 {
            *slot / penalty
        } else {
            *slot * penalty
        };
    }
    Ok(out)
}

/// Keeps the `k` most probable tokens and renormalizes over them.
pub fn top_k_filter(dist: &TokenDistribution, k: usize) -> Result<TokenDistribution> {
    if k == 0 {
        return Err(Error::InvalidInput("top-k needs k >= 1".into()));
    }
    if dist.probs.iter().all(|p| *p == 0.0) {
        return Err(Error::InvalidInput("all-zero distribution".into()));
    }
    let ranked = dist.ranked();
    let keep = &ranked[..k.min(ranked.len())];
    dist.restrict(keep)
}

/// Keeps the shortest descending-probability prefix whose mass reaches
/// `nucleus_p` and renormalizes over it.
pub fn nucleus_filter(dist: &TokenDistribution, nucleus_p: f64) -> Result<TokenDistribution> {
    if !(nucleus_p > 0.0 && nucleus_p <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "nucleus p {nucleus_p} outside (0, 1]"
        )));
    }
    let ranked = dist.ranked();
    let mut cumulative = 0.0;
    let mut cut = 0;
    for (n, &i) in ranked.iter().enumerate() {
        if dist.probs[i] == 0.0 {
            break;
        }
        cumulative += dist.probs[i];
        cut = n + 1;
        if cumulative >= nucleus_p {
            break;
        }
    }
    dist.restrict(&ranked[..cut.max(1)])
}

/// Inverse-CDF draw.
pub fn sample_token<R: Rng + ?Sized>(dist: &TokenDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return i;
            }
        }
    }
    last_positive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub top_k: usize,
    pub nucleus_p: f64,
    pub repetition_penalty: f64,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            top_k: 50,
            nucleus_p: 0.95,
            repetition_penalty: 1.2,
            temperature: 0.6,
            max_tokens: 48,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.max_tokens == 0 {
            return Err(Error::InvalidConfig(
                "top_k and max_tokens must be positive".into(),
            ));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::InvalidConfig("nucleus_p must be in (0, 1]".into()));
        }
        if self.repetition_penalty.is_nan()
            || self.repetition_penalty < 1.0
            || self.temperature.is_nan()
            || self.temperature <= 0.0
        {
            return Err(Error::InvalidConfig(
                "repetition_penalty must be >= 1 and temperature > 0".into(),
            ));
        }
        Ok(())
    }

    /// One full decoding step: penalty, temperature, top-k, nucleus.
    pub fn transform(&self, logits: &[f64], history: &BTreeSet<usize>) -> Result<TokenDistribution> {
        let penalized = apply_repetition_penalty(logits, history, self.repetition_penalty)?;
        let dist = apply_temperature(&penalized, self.temperature)?;
        let dist = top_k_filter(&dist, self.top_k)?;
        nucleus_filter(&dist, self.nucleus_p)
    }
}

/// Produces next-token logits for a token history.
pub trait LogitSource {
    fn vocabulary(&self) -> &[String];

    fn end_token(&self) -> Option<usize>;

    fn next_logits(&self, history: &[usize]) -> Result<Vec<f64>>;
}

/// First-order Markov table keyed by the previous token (or the start state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovFixture {
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub end_token: Option<String>,
    pub start: Vec<f64>,
    pub transitions: HashMap<String, Vec<f64>>,
}

impl MarkovFixture {
    pub fn validate(&self) -> Result<()> {
        let v = self.vocabulary.len();
        if v == 0 {
            return Err(Error::InvalidConfig("fixture vocabulary is empty".into()));
        }
        if self.start.len() != v {
            return Err(Error::InvalidConfig(format!(
                "start row has {} logits for vocabulary of {v}",
                self.start.len()
            )));
        }
        for (tok, row) in &self.transitions {
            if !self.vocabulary.contains(tok) {
                return Err(Error::InvalidConfig(format!("transition from unknown token {tok:?}")));
            }
            if row.len() != v {
                return Err(Error::InvalidConfig(format!(
                    "row for {tok:?} has {} logits for vocabulary of {v}",
                    row.len()
                )));
            }
        }
        if let Some(end) = &self.end_token {
            if !self.vocabulary.contains(end) {
                return Err(Error::InvalidConfig(format!("end token {end:?} not in vocabulary")));
            }
        }
        Ok(())
    }
}

impl LogitSource for MarkovFixture {
    fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn end_token(&self) -> Option<usize> {
        let end = self.end_token.as_ref()?;
        self.vocabulary.iter().position(|t| t == end)
    }

    fn next_logits(&self, history: &[usize]) -> Result<Vec<f64>> {
        let Some(&last) = history.last() else {
            return Ok(self.start.clone());
        };
        let tok = &self.vocabulary[last];
        self.transitions
            .get(tok)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("fixture has no transitions from {tok:?}")))
    }
}

#[derive(Serialize)]
struct LogitRequest<'a> {
    history: Vec<&'a str>,
}

#[derive(Deserialize)]
struct LogitResponse {
    logits: Vec<f64>,
}

/// Logit source backed by a service speaking
/// `POST {"history": [token, ...]} -> {"logits": [...]}`.
#[derive(Debug, Clone)]
pub struct RemoteLogitSource {
    vocabulary: Vec<String>,
    end_token: Option<usize>,
    client: JsonClient,
}

impl RemoteLogitSource {
    pub fn new(endpoint: &str, vocabulary: Vec<String>, end_token: Option<&str>, timeout_ms: u64) -> Result<Self> {
        if vocabulary.is_empty() {
            return Err(Error::InvalidConfig("remote source needs a vocabulary".into()));
        }
        let end_token = match end_token {
            None => None,
            Some(end) => Some(vocabulary.iter().position(|t| t == end).ok_or_else(|| {
                Error::InvalidConfig(format!("end token {end:?} not in vocabulary"))
            })?),
        };
        Ok(Self {
            vocabulary,
            end_token,
            client: JsonClient::new(endpoint, timeout_ms, Stage::Logits),
        })
    }
}

impl LogitSource for RemoteLogitSource {
    fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn end_token(&self) -> Option<usize> {
        self.end_token
    }

    fn next_logits(&self, history: &[usize]) -> Result<Vec<f64>> {
        let request = LogitRequest {
            history: history.iter().map(|&i| self.vocabulary[i].as_str()).collect(),
        };
        let response: LogitResponse = self.client.post(&request)?;
        if response.logits.len() != self.vocabulary.len() {
            return Err(self.client.error(format!(
                "expected {} logits, got {}",
                self.vocabulary.len(),
                response.logits.len()
            )));
        }
        Ok(response.logits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LogitSourceSpec {
    MarkovFixture {
        #[serde(flatten)]
        fixture: MarkovFixture,
    },
    RemoteHttp {
        endpoint: String,
        vocabulary: Vec<String>,
        #[serde(default)]
        end_token: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl LogitSourceSpec {
    pub fn build(&self) -> Result<Box<dyn LogitSource + Send + Sync>> {
        Ok(match self {
            LogitSourceSpec::MarkovFixture { fixture } => {
                fixture.validate()?;
                Box::new(fixture.clone())
            }
            LogitSourceSpec::RemoteHttp {
                endpoint,
                vocabulary,
                end_token,
                timeout_ms,
            } => Box::new(RemoteLogitSource::new(
                endpoint,
                vocabulary.clone(),
                end_token.as_deref(),
                *timeout_ms,
            )?),
        })
    }
}

/// Generated token sequence, without the end token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub tokens: Vec<String>,
}

impl Generation {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// A line of a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPrompt {
    pub agent: String,
    pub text: String,
}

/// Samples one sequence from `source`, stopping at the end token or after
/// `cfg.max_tokens` tokens.
pub fn generate_prompt(source: &dyn LogitSource, cfg: &SamplingConfig) -> Result<Generation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    generate_with_rng(source, cfg, &mut rng)
}

/// As [`generate_prompt`] but drawing from a caller-owned rng, so several
/// prompts can be generated from one seeded stream.
pub fn generate_with_rng<R: Rng + ?Sized>(
    source: &dyn LogitSource,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Generation> {
    let vocab = source.vocabulary();
    let end = source.end_token();
    let mut history: Vec<usize> = Vec::new();
    let mut seen = BTreeSet::new();
    let partial = |history: &[usize]| history.iter().map(|&i| vocab[i].clone()).collect::<Vec<_>>();

    while history.len() < cfg.max_tokens {
        let logits = source.next_logits(&history).map_err(|e| Error::Generation {
            partial: partial(&history),
            message: e.to_string(),
        })?;
        if logits.len() != vocab.len() {
            return Err(Error::Generation {
                partial: partial(&history),
                message: format!("source returned {} logits for vocabulary of {}", logits.len(), vocab.len()),
            });
        }
        let dist = cfg.transform(&logits, &seen)?;
        let tok = sample_token(&dist, rng);
        if Some(tok) == end {
            break;
        }
        history.push(tok);
        seen.insert(tok);
    }
    Ok(Generation {
        tokens: partial(&history),
    })
}
