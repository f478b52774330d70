//! Unit-normalized sentence embeddings, cosine similarity, and the text
//! embedding providers that produce them.
//!
//! Every embedding the engine stores is normalized at construction, so the
//! query-time cosine is a dot product scaled by cached row norms.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result, Stage};
use crate::http::JsonClient;

/// Maximum deviation of a stored embedding's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

/// A unit-length real vector.
#[derive(Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Wraps values that are already unit-normalized, validating the invariant.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidEmbedding(format!(
                "expected unit norm, got {norm}"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.values.iter().take(4).collect();
        f.debug_struct("Embedding")
            .field("dim", &self.values.len())
            .field("head", &head)
            .finish()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidEmbedding("empty vector".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidEmbedding(format!(
            "component {i} is not finite"
        )));
    }
    Ok(())
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `raw` to unit length.
pub fn normalize(raw: &[f64]) -> Result<Embedding> {
    check_finite(raw)?;
    let norm = l2_norm(raw);
    if norm == 0.0 {
        return Err(Error::InvalidEmbedding("zero vector".into()));
    }
    if !norm.is_finite() {
        return Err(Error::InvalidEmbedding("norm overflows".into()));
    }
    Ok(Embedding {
        values: raw.iter().map(|v| v / norm).collect(),
    })
}

/// Cosine of the angle between two embeddings, clamped to [-1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_raw(a.values(), b.values())
}

/// Cosine similarity for arbitrary nonzero vectors.
pub fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cosine of vectors with dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::InvalidEmbedding("cosine of a zero vector".into()));
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Collapses whitespace runs to single spaces and drops other control characters.
pub fn normalize_whitespace(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_whitespace() || !c.is_control())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased whitespace tokens, the unit shared by the hash embedder and shingling.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Anything that maps sentences to embeddings of a fixed dimension.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One embedding per input text, in order. Inputs are already validated.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

/// Embeds `texts` with `embedder`, validating inputs and the provider's output.
pub fn embed_texts<S: AsRef<str>>(embedder: &dyn TextEmbedder, texts: &[S]) -> Result<Vec<Embedding>> {
    if texts.is_empty() {
        return Err(Error::InvalidInput("no texts to embed".into()));
    }
    let cleaned: Vec<String> = texts.iter().map(|t| normalize_whitespace(t.as_ref())).collect();
    if let Some(i) = cleaned.iter().position(String::is_empty) {
        return Err(Error::InvalidInput(format!("text {i} is empty")));
    }
    let refs: Vec<&str> = cleaned.iter().map(String::as_str).collect();
    let out = embedder.embed_batch(&refs)?;
    if out.len() != texts.len() {
        return Err(Error::Provider {
            stage: Stage::Embed,
            message: format!("expected {} embeddings, got {}", texts.len(), out.len()),
        });
    }
    if let Some(bad) = out.iter().find(|e| e.dim() != embedder.dim()) {
        return Err(Error::Provider {
            stage: Stage::Embed,
            message: format!("expected dim {}, got {}", embedder.dim(), bad.dim()),
        });
    }
    Ok(out)
}

/// Model-free embedder: signed random projection of lowercase whitespace tokens.
///
/// Each token hashes (with the seed) to a pseudo-random ±1 vector; a text is the
/// normalized sum of its token vectors. Texts sharing tokens land close together,
/// texts with disjoint vocabularies are nearly orthogonal in high dimension.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    fn accumulate(&self, token: &str, acc: &mut [i64]) {
        let mut state = xxh3_64_with_seed(token.as_bytes(), self.seed);
        for chunk in acc.chunks_mut(64) {
            let bits = splitmix64(&mut state);
            for (j, slot) in chunk.iter_mut().enumerate() {
                *slot += if bits >> j & 1 == 1 { 1 } else { -1 };
            }
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::InvalidInput("text has no tokens".into()));
        }
        let mut acc = vec![0i64; self.dim];
        for token in &tokens {
            self.accumulate(token, &mut acc);
        }
        let raw: Vec<f64> = acc.into_iter().map(|v| v as f64).collect();
        normalize(&raw)
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Embedder backed by an external service speaking
/// `POST {"texts": [...]} -> {"embeddings": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    dim: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, dim: usize, timeout_ms: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        Ok(Self {
            dim,
            client: JsonClient::new(endpoint, timeout_ms, Stage::Embed),
        })
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let response: EmbedResponse = self.client.post(&EmbedRequest { texts })?;
        if response.embeddings.len() != texts.len() {
            return Err(self.client.error(format!(
                "expected {} rows, got {}",
                texts.len(),
                response.embeddings.len()
            )));
        }
        response
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != self.dim {
                    return Err(self.client.error(format!(
                        "row {i} has dim {}, expected {}",
                        row.len(),
                        self.dim
                    )));
                }
                normalize(row).map_err(|e| self.client.error(format!("row {i}: {e}")))
            })
            .collect()
    }
}

/// Serializable description of an embedding backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingProviderSpec {
    DeterministicHash {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    RemoteHttp {
        dim: usize,
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl Default for EmbeddingProviderSpec {
    fn default() -> Self {
        EmbeddingProviderSpec::DeterministicHash { dim: 768, seed: 0 }
    }
}

impl EmbeddingProviderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProviderSpec::DeterministicHash { dim, .. }
            | EmbeddingProviderSpec::RemoteHttp { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn TextEmbedder>> {
        Ok(match self {
            EmbeddingProviderSpec::DeterministicHash { dim, seed } => {
                Arc::new(HashEmbedder::new(*dim, *seed)?)
            }
            EmbeddingProviderSpec::RemoteHttp {
                dim,
                endpoint,
                timeout_ms,
            } => Arc::new(RemoteEmbedder::new(endpoint, *dim, *timeout_ms)?),
        })
    }
}

/// How raw user prompts are standardized before embedding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RephraseSpec {
    #[default]
    Identity,
    RemoteHttp {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

/// A standardized prompt and whether a rephrasing service produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedPrompt {
    pub text: String,
    pub rephrased: bool,
}

#[derive(Serialize)]
struct RephraseBody<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct RephraseReply {
    text: String,
}

/// Rephrase-and-respond preprocessing. Remote failures degrade to the
/// identity rewrite with `rephrased = false`.
#[derive(Debug, Clone)]
pub struct Rephraser {
    remote: Option<JsonClient>,
}

impl Rephraser {
    pub fn from_spec(spec: &RephraseSpec) -> Self {
        let remote = match spec {
            RephraseSpec::Identity => None,
            RephraseSpec::RemoteHttp {
                endpoint,
                timeout_ms,
            } => Some(JsonClient::new(endpoint, *timeout_ms, Stage::Rephrase)),
        };
        Self { remote }
    }

    pub fn identity() -> Self {
        Self { remote: None }
    }

    pub fn preprocess(&self, raw: &str) -> Result<PreparedPrompt> {
        let local = normalize_whitespace(raw);
        if local.is_empty() {
            return Err(Error::InvalidPrompt("prompt is empty".into()));
        }
        let Some(client) = &self.remote else {
            return Ok(PreparedPrompt {
                text: local,
                rephrased: false,
            });
        };
        match client.post::<_, RephraseReply>(&RephraseBody { text: raw }) {
            Ok(reply) => {
                let text = normalize_whitespace(&reply.text);
                if text.is_empty() {
                    log::warn!("rephrase service returned empty text; using prompt as-is");
                    Ok(PreparedPrompt {
                        text: local,
                        rephrased: false,
                    })
                } else {
                    Ok(PreparedPrompt {
                        text,
                        rephrased: true,
                    })
                }
            }
            Err(e) => {
                log::warn!("rephrase failed, using prompt as-is: {e}");
                Ok(PreparedPrompt {
                    text: local,
                    rephrased: false,
                })
            }
        }
    }
}

pub fn preprocess_prompt(raw: &str, spec: &RephraseSpec) -> Result<PreparedPrompt> {
    Rephraser::from_spec(spec).preprocess(raw)
}
