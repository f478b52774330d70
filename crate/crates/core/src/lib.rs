//! Agent recommendation by sentence-embedding similarity.
//!
//! A prompt is embedded and compared by cosine similarity against cached
//! per-agent embedding corpora; each agent's similarities are reduced to a
//! score (by default the log of the generalized p-mean with p = 200) and the
//! highest-scoring agents are recommended.
//!
//! Besides the query path the crate carries the dataset tooling used to
//! build corpora: decoding transforms for synthetic prompt generation,
//! MinHash deduplication, balanced splits, a binary embedding cache and PCA
//! export for plots.

pub mod corpus;
pub mod dedup;
pub mod embedding;
pub mod error;
mod http;
pub mod jsonl;
pub mod projection;
pub mod sampling;
pub mod scoring;

pub use corpus::{AgentCorpus, Corpora, DatasetSplits, PromptRecord, SplitRatios};
pub use embedding::{
    cosine_similarity, normalize, Embedding, EmbeddingProviderSpec, HashEmbedder, RephraseSpec, Rephraser,
    TextEmbedder,
};
pub use error::{CacheError, Error, Result, Stage};
pub use scoring::{
    RankedAgent, Recommendation, Recommender, ScoreConfig, ScoreKind, EvalReport, LatencyReport,
};
