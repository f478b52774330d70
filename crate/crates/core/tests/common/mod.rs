#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use agentrec_core::corpus::{build_agent_corpora, Corpora, PromptRecord};
use agentrec_core::embedding::{normalize, Embedding, HashEmbedder, TextEmbedder};
use agentrec_core::Result;
use num_bigint::BigUint;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Handler = Arc<dyn Fn(&str, &str) -> (u16, String) + Send + Sync>;

/// Tiny blocking HTTP server answering every request through `handler(path, body)`.
pub struct MockServer {
    pub url: String,
}

impl MockServer {
    pub fn start(handler: Handler) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = handler.clone();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut request_line = String::new();
                    if reader.read_line(&mut request_line).is_err() {
                        return;
                    }
                    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
                    let mut content_length = 0;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                            break;
                        }
                        if let Some((k, v)) = line.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                content_length = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut body = vec![0; content_length];
                    let _ = reader.read_exact(&mut body);
                    let (status, reply) = handler(&path, &String::from_utf8_lossy(&body));
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                        reply.len()
                    );
                });
            }
        });
        Self { url }
    }
}

/// ln of the p-mean of `sims` clamped to [eps, 1], evaluated naively with
/// exact big-integer arithmetic: every sᵢ is an exact dyadic rational
/// mantᵢ·2^expᵢ, so Σ sᵢᵖ is an exact integer times a power of two. Only the
/// final logarithm is rounded. `p` must be a positive integer.
pub fn exact_log_pmean(sims: &[f64], p: u32, eps: f64) -> f64 {
    let parts: Vec<(u64, i64)> = sims
        .iter()
        .map(|&s| {
            let s = s.clamp(eps, 1.0);
            let bits = s.to_bits();
            let exp = ((bits >> 52) & 0x7ff) as i64;
            let mant = (bits & ((1 << 52) - 1)) | (1 << 52);
            (mant, exp - 1075)
        })
        .collect();
    let min_exp = parts.iter().map(|&(_, e)| e * p as i64).min().unwrap();
    let mut total = BigUint::from(0u32);
    for &(mant, exp) in &parts {
        let shift = (exp * p as i64 - min_exp) as usize;
        total += BigUint::from(mant).pow(p) << shift;
    }
    let bits = total.bits() as i64;
    let keep = bits.min(64);
    let top: BigUint = &total >> (bits - keep) as usize;
    let top = top.iter_u64_digits().next().unwrap_or(0) as f64;
    let ln_total = top.ln() + ((bits - keep) + min_exp) as f64 * std::f64::consts::LN_2;
    (ln_total - (sims.len() as f64).ln()) / p as f64
}

/// Naive f64 evaluation, for demonstrating underflow.
pub fn naive_f64_log_pmean(sims: &[f64], p: f64) -> f64 {
    let mean = sims.iter().map(|s| s.powf(p)).sum::<f64>() / sims.len() as f64;
    mean.ln() / p
}

/// Plain cosine from raw components, independent of the engine's cached norms.
pub fn plain_cosine(a: &[f64], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let y = f64::from(*y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub const TOPICS: [(&str, &[&str]); 4] = [
    (
        "cooking",
        &[
            "bake", "bread", "oven", "recipe", "pasta", "sauce", "garlic", "onion", "dough", "roast", "chicken",
            "simmer", "broth", "knife", "skillet", "butter", "flour", "yeast", "grill", "marinade", "spice",
            "dessert", "frosting", "caramel", "noodles", "dumplings", "stew", "salad", "vinaigrette", "omelette",
        ],
    ),
    (
        "gaming",
        &[
            "console", "controller", "boss", "level", "quest", "multiplayer", "speedrun", "loot", "raid", "respawn",
            "checkpoint", "shooter", "platformer", "mod", "framerate", "lag", "server", "guild", "dungeon", "achievement",
            "trophy", "strategy", "esports", "joystick", "headset", "patch", "nerf", "buff", "inventory", "crafting",
        ],
    ),
    (
        "math",
        &[
            "integral", "derivative", "matrix", "eigenvalue", "proof", "lemma", "theorem", "polynomial", "equation",
            "prime", "factor", "limit", "series", "vector", "probability", "variance", "logarithm", "fraction",
            "geometry", "triangle", "angle", "calculus", "algebra", "topology", "modulus", "permutation",
            "combinatorics", "induction", "inequality", "graph",
        ],
    ),
    (
        "tech",
        &[
            "router", "wifi", "laptop", "printer", "driver", "reboot", "password", "firewall", "keyboard", "monitor",
            "bluetooth", "update", "firmware", "browser", "cache", "cookie", "antivirus", "backup", "ethernet", "modem",
            "battery", "charger", "screen", "mouse", "install", "uninstall", "account", "email", "vpn", "disk",
        ],
    ),
];

const FILLERS: [&str; 6] = [
    "how do i",
    "what is the best way to handle",
    "can you help me with",
    "give me tips about",
    "explain",
    "i need advice on",
];

fn topic_prompt(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let filler = FILLERS.choose(rng).unwrap();
    let n = rng.random_range(3..=5);
    let picked: Vec<&str> = words.choose_multiple(rng, n).copied().collect();
    format!("{filler} {}", picked.join(" "))
}

pub struct TopicFixture {
    pub embedder: HashEmbedder,
    pub corpus_prompts: Vec<PromptRecord>,
    pub held_out: Vec<PromptRecord>,
    pub corpora: Corpora,
}

/// Four agents with disjoint topic vocabularies sharing a common set of
/// filler phrases; `per_agent` corpus prompts and `held_out` test prompts each.
pub fn topic_fixture(per_agent: usize, held_out: usize, seed: u64) -> TopicFixture {
    let embedder = HashEmbedder::new(768, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus_prompts = Vec::new();
    let mut test = Vec::new();
    for (agent, words) in TOPICS {
        for i in 0..per_agent {
            corpus_prompts.push(PromptRecord::new(format!("{agent}-c{i}"), agent, topic_prompt(&mut rng, words)));
        }
        for i in 0..held_out {
            test.push(PromptRecord::new(format!("{agent}-t{i}"), agent, topic_prompt(&mut rng, words)));
        }
    }
    let corpora = build_agent_corpora(&corpus_prompts, &embedder, None).unwrap();
    TopicFixture {
        embedder,
        corpus_prompts,
        held_out: test,
        corpora,
    }
}

/// Embedder that looks texts up in a fixed table.
pub struct TableEmbedder {
    pub dim: usize,
    pub table: HashMap<String, Embedding>,
}

impl TextEmbedder for TableEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| agentrec_core::Error::InvalidInput(format!("no vector for {t:?}")))
            })
            .collect()
    }
}

pub struct AdversarialFixture {
    pub embedder: TableEmbedder,
    pub corpora: Corpora,
    pub queries: Vec<PromptRecord>,
}

/// Every agent's corpus is a tight cluster around its topic direction; each
/// held-out query sits near its own cluster, and every *other* agent's corpus
/// also holds one near-duplicate of that query. Max-similarity scoring is
/// lured by the single near-duplicate; mean-type scores are not.
pub fn adversarial_fixture(agents: usize, per_agent: usize, queries_per_agent: usize, seed: u64) -> AdversarialFixture {
    let dim = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for x in v.iter_mut().skip(agents) {
            *x = rng.random::<f64>() * 2.0 - 1.0;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let axis = |a: usize| -> Vec<f64> { (0..dim).map(|i| if i == a { 1.0 } else { 0.0 }).collect() };
    let mix = |base: &[f64], dir: &[f64], w: f64| -> Vec<f64> { base.iter().zip(dir).map(|(b, d)| b + w * d).collect() };

    let mut table = HashMap::new();
    let mut prompts = Vec::new();
    let mut queries = Vec::new();
    let names: Vec<String> = (0..agents).map(|a| format!("agent{a}")).collect();
    for (a, name) in names.iter().enumerate() {
        for j in 0..per_agent {
            let text = format!("{name} corpus {j}");
            table.insert(text.clone(), normalize(&mix(&axis(a), &noise(&mut rng), 0.10)).unwrap());
            prompts.push(PromptRecord::new(text.clone(), name.clone(), text));
        }
        for q in 0..queries_per_agent {
            let text = format!("{name} query {q}");
            let raw = mix(&axis(a), &noise(&mut rng), 0.15);
            table.insert(text.clone(), normalize(&raw).unwrap());
            queries.push(PromptRecord::new(text.clone(), name.clone(), text.clone()));
            for (b, other) in names.iter().enumerate() {
                if b == a {
                    continue;
                }
                let dup = format!("{other} near-duplicate of {text}");
                table.insert(dup.clone(), normalize(&mix(&raw, &noise(&mut rng), 0.05)).unwrap());
                prompts.push(PromptRecord::new(dup.clone(), other.clone(), dup));
            }
        }
    }
    let embedder = TableEmbedder { dim, table };
    let corpora = build_agent_corpora(&prompts, &embedder, None).unwrap();
    AdversarialFixture {
        embedder,
        corpora,
        queries,
    }
}

/// Brute-force top-k evaluation: plain cosine, exact naive p-means, full sort.
/// Returns (k → accuracy, true → predicted → count).
pub fn brute_force_eval(
    corpora: &Corpora,
    queries: &[(String, Vec<f64>)],
    p: u32,
    eps: f64,
    ks: &[usize],
) -> (BTreeMap<usize, f64>, BTreeMap<String, BTreeMap<String, usize>>) {
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (label, q) in queries {
        let mut scored: Vec<(f64, String)> = corpora
            .iter()
            .map(|(agent, corpus)| {
                let sims: Vec<f64> = corpus.rows().map(|row| plain_cosine(q, row)).collect();
                (exact_log_pmean(&sims, p, eps), agent.clone())
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let pos = scored.iter().position(|(_, a)| a == label).unwrap();
        for (k, h) in hits.iter_mut() {
            if pos < *k {
                *h += 1;
            }
        }
        *confusion.entry(label.clone()).or_default().entry(scored[0].1.clone()).or_default() += 1;
    }
    let n = queries.len() as f64;
    (hits.into_iter().map(|(k, h)| (k, h as f64 / n)).collect(), confusion)
}
