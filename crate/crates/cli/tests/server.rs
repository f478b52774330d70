mod common;

use std::sync::Arc;
use std::time::Duration;

use agentrec_cli::server::{spawn, AppState};
use agentrec_core::corpus::{build_agent_corpora, load_corpus_cache};
use agentrec_core::{EmbeddingProviderSpec, Recommender, Rephraser, ScoreConfig, TextEmbedder};
use common::{topic_prompts, HASH_PROVIDER};
use reqwest::StatusCode;
use serde_json::{json, Value};

fn embedder() -> Arc<dyn TextEmbedder> {
    serde_json::from_str::<EmbeddingProviderSpec>(HASH_PROVIDER).unwrap().build().unwrap()
}

fn engine() -> Recommender {
    let emb = embedder();
    let corpora = build_agent_corpora(&topic_prompts(25, 0), emb.as_ref(), None).unwrap();
    Recommender::new(Arc::new(corpora), emb, Rephraser::identity(), ScoreConfig::default()).unwrap()
}

async fn start(engine: Recommender, persist: Option<std::path::PathBuf>) -> (String, Arc<AppState>) {
    let state = Arc::new(AppState::new(engine, 3, persist));
    let (addr, _) = spawn(state.clone(), "127.0.0.1:0").await.unwrap();
    (format!("http://{addr}"), state)
}

async fn recommend_raw(client: &reqwest::Client, base: &str, body: Value) -> (StatusCode, String) {
    let resp = client.post(format!("{base}/v1/recommend")).json(&body).send().await.unwrap();
    (resp.status(), resp.text().await.unwrap())
}

fn ranked_json(text: &str) -> String {
    let v: Value = serde_json::from_str(text).unwrap();
    serde_json::to_string(&v["ranked"]).unwrap()
}

const QUERIES: [&str; 6] = [
    "how do i bake bread with yeast",
    "the boss level keeps lagging",
    "prove the lemma about prime series",
    "my laptop wifi driver is broken",
    "explain vectors and variance",
    "tips about dungeon loot",
];

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn health_and_agents() {
    let (base, _) = start(engine(), None).await;
    let health: Value = reqwest::get(format!("{base}/healthz")).await.unwrap().json().await.unwrap();
    assert_eq!(health, json!({ "status": "ok", "agents": 4 }));
    let agents: Value = reqwest::get(format!("{base}/v1/agents")).await.unwrap().json().await.unwrap();
    assert_eq!(agents["agents"].as_array().unwrap().len(), 4);
    assert_eq!(agents["agents"][0], json!({ "id": "cooking", "corpus_size": 25 }));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn invalid_requests_get_error_codes() {
    let (base, _) = start(engine(), None).await;
    let client = reqwest::Client::new();
    for (body, code) in [
        (json!({ "prompt": "" }), "invalid_prompt"),
        (json!({ "prompt": "   " }), "invalid_prompt"),
        (json!({ "prompt": "hi", "k": 0 }), "invalid_input"),
        (json!({ "text": "hi" }), "invalid_request"),
    ] {
        let (status, text) = recommend_raw(&client, &base, body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["error"]["code"], code, "{text}");
    }
    let resp = client
        .post(format!("{base}/v1/recommend"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn response_ranked_is_library_serialization() {
    let lib = engine();
    let (base, _) = start(lib.clone(), None).await;
    let client = reqwest::Client::new();
    for q in QUERIES {
        for k in [1, 3, 4, 10] {
            let (status, text) = recommend_raw(&client, &base, json!({ "prompt": q, "k": k })).await;
            assert_eq!(status, StatusCode::OK);
            let expected = serde_json::to_string(&lib.recommend(q, k).unwrap().ranked).unwrap();
            assert!(text.contains(&format!("\"ranked\":{expected}")), "{text}");
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["rephrased"], false);
            assert!(v["elapsed_ms"].as_f64().unwrap() >= 0.0);
        }
    }
    let (_, text) = recommend_raw(&client, &base, json!({ "prompt": QUERIES[0] })).await;
    assert_eq!(serde_json::from_str::<Value>(&text).unwrap()["ranked"].as_array().unwrap().len(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_match_serial() {
    let lib = engine();
    let (base, _) = start(lib.clone(), None).await;
    let client = reqwest::Client::new();
    let mut tasks = Vec::new();
    for i in 0..96 {
        let (client, base) = (client.clone(), base.clone());
        let q = QUERIES[i % QUERIES.len()];
        tasks.push(tokio::spawn(async move {
            (q, recommend_raw(&client, &base, json!({ "prompt": q, "k": 4 })).await.1)
        }));
    }
    for t in tasks {
        let (q, text) = t.await.unwrap();
        assert_eq!(ranked_json(&text), serde_json::to_string(&lib.recommend(q, 4).unwrap().ranked).unwrap());
    }
}

async fn wait_for(base: &str, agent: &str, size: Option<u64>) {
    for _ in 0..200 {
        let agents: Value = reqwest::get(format!("{base}/v1/agents")).await.unwrap().json().await.unwrap();
        let found = agents["agents"].as_array().unwrap().iter().find(|a| a["id"] == agent).map(|a| a["corpus_size"].as_u64().unwrap());
        if found == size {
            return;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("agent {agent} never reached size {size:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn admin_rebuild_and_delete() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("served.cache");
    let (base, _) = start(engine(), Some(cache.clone())).await;
    let client = reqwest::Client::new();

    let prompts = ["water the tomato plants", "prune the rose bushes", "compost garden soil"];
    let resp = client
        .post(format!("{base}/v1/corpus/gardening/prompts"))
        .json(&json!({ "prompts": prompts }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    wait_for(&base, "gardening", Some(3)).await;
    let (_, text) = recommend_raw(&client, &base, json!({ "prompt": "when to prune roses", "k": 1 })).await;
    assert_eq!(serde_json::from_str::<Value>(&text).unwrap()["ranked"][0]["agent"], "gardening");
    let persisted = load_corpus_cache(&cache).unwrap();
    assert_eq!(persisted["gardening"].len(), 3);

    let resp = client.delete(format!("{base}/v1/corpus/gaming")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    wait_for(&base, "gaming", None).await;
    assert!(!load_corpus_cache(&cache).unwrap().contains_key("gaming"));

    let resp = client.delete(format!("{base}/v1/corpus/gaming")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"]["code"], "unknown_agent");

    for bad in [json!({ "prompts": [] }), json!({ "prompts": ["ok", " "] }), json!({ "text": "x" })] {
        let resp = client.post(format!("{base}/v1/corpus/x/prompts")).json(&bad).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn rebuild_swaps_atomically_under_load() {
    let old = engine();
    let (base, state) = start(old.clone(), None).await;
    let client = reqwest::Client::new();
    let replacement: Vec<String> = (0..40).map(|i| format!("bread oven recipe number {i} bake")).collect();

    let q = "how do i bake bread in the oven";
    let old_ranked = serde_json::to_string(&old.recommend(q, 4).unwrap().ranked).unwrap();

    let mut readers = Vec::new();
    for _ in 0..8 {
        let (client, base) = (client.clone(), base.clone());
        readers.push(tokio::spawn(async move {
            let mut seen = Vec::new();
            for _ in 0..40 {
                seen.push(ranked_json(&recommend_raw(&client, &base, json!({ "prompt": q, "k": 4 })).await.1));
            }
            seen
        }));
    }
    let resp = client
        .post(format!("{base}/v1/corpus/math/prompts"))
        .json(&json!({ "prompts": replacement }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    let mut seen = Vec::new();
    for r in readers {
        seen.extend(r.await.unwrap());
    }
    wait_for(&base, "math", Some(40)).await;
    let new_ranked = serde_json::to_string(&state.engine().recommend(q, 4).unwrap().ranked).unwrap();
    assert_ne!(old_ranked, new_ranked);
    for s in &seen {
        assert!(*s == old_ranked || *s == new_ranked, "mixed result {s}");
    }
}
