//! Synthetic workloads shared by the benchmarks.

use std::sync::Arc;

use agentrec_core::corpus::{build_agent_corpora, Corpora, PromptRecord};
use agentrec_core::{HashEmbedder, TextEmbedder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_prompt(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| format!("w{}", rng.random_range(0..5000))).collect::<Vec<_>>().join(" ")
}

/// `agents` corpora of `rows` hash-embedded random prompts each.
pub fn synthetic_corpora(agents: usize, rows: usize, dim: usize, seed: u64) -> (Arc<Corpora>, Arc<dyn TextEmbedder>) {
    let embedder: Arc<dyn TextEmbedder> = Arc::new(HashEmbedder::new(dim, seed).expect("positive dim"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompts: Vec<PromptRecord> = (0..agents)
        .flat_map(|a| (0..rows).map(move |i| (a, i)))
        .map(|(a, i)| {
            let len = rng.random_range(6..20);
            PromptRecord::new(format!("a{a}-{i}"), format!("agent{a}"), random_prompt(&mut rng, len))
        })
        .collect();
    let corpora = build_agent_corpora(&prompts, embedder.as_ref(), None).expect("synthetic corpora");
    (Arc::new(corpora), embedder)
}
