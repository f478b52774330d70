use std::hint::black_box;

use agentrec_bench::{random_prompt, synthetic_corpora};
use agentrec_core::scoring::{aggregate, rank_agents, score_pmeans, Aggregation};
use agentrec_core::{Recommender, Rephraser, ScoreConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn aggregation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sims: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut group = c.benchmark_group("aggregate_1000");
    group.bench_function("pmeans_200", |b| b.iter(|| score_pmeans(black_box(&sims), 200.0, 1e-6)));
    for (name, kind) in [
        ("max", Aggregation::Max),
        ("arith", Aggregation::Arithmetic),
        ("geo", Aggregation::Geometric),
    ] {
        group.bench_function(name, |b| b.iter(|| aggregate(black_box(&sims), kind, 1e-6)));
    }
    group.finish();
}

fn recommend(c: &mut Criterion) {
    let mut group = c.benchmark_group("recommend");
    group.sample_size(30);
    for rows in [100, 1000] {
        let (corpora, embedder) = synthetic_corpora(8, rows, 768, 7);
        let engine = Recommender::new(corpora.clone(), embedder.clone(), Rephraser::identity(), ScoreConfig::default())
            .expect("engine");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prompt = random_prompt(&mut rng, 12);
        group.bench_with_input(BenchmarkId::new("8_agents_dim768", rows), &prompt, |b, p| {
            b.iter(|| engine.recommend(black_box(p), 3))
        });
        let query = embedder.embed_batch(&[prompt.as_str()]).expect("embed").remove(0);
        group.bench_with_input(BenchmarkId::new("rank_only", rows), &query, |b, q| {
            b.iter(|| rank_agents(black_box(q), &corpora, &ScoreConfig::default()))
        });
    }
    group.finish();
}

criterion_group!(benches, aggregation, recommend);
criterion_main!(benches);
