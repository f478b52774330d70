#![allow(dead_code)]

use std::path::Path;

use agentrec_core::corpus::PromptRecord;
use agentrec_core::jsonl::write_jsonl;

pub const HASH_PROVIDER: &str = r#"{"kind":"deterministic-hash","dim":256,"seed":5}"#;

const TOPICS: [(&str, [&str; 12]); 4] = [
    ("cooking", ["bake", "bread", "oven", "pasta", "sauce", "garlic", "dough", "roast", "broth", "butter", "flour", "yeast"]),
    ("gaming", ["console", "boss", "level", "quest", "loot", "raid", "respawn", "guild", "dungeon", "trophy", "patch", "lag"]),
    ("math", ["integral", "matrix", "proof", "lemma", "theorem", "prime", "limit", "series", "vector", "variance", "angle", "graph"]),
    ("tech", ["router", "wifi", "laptop", "printer", "driver", "reboot", "password", "firewall", "modem", "battery", "browser", "disk"]),
];

const FILLERS: [&str; 4] = ["how do i", "help me with", "tips about", "explain"];

/// Deterministic 4-agent dataset: `n` prompts per agent, each a filler
/// phrase plus three topic words.
pub fn topic_prompts(n: usize, offset: usize) -> Vec<PromptRecord> {
    let mut out = Vec::new();
    for (agent, words) in TOPICS {
        for i in offset..offset + n {
            let text = format!(
                "{} {} {} {}",
                FILLERS[i % 4],
                words[i % 12],
                words[(i * 5 + 1) % 12],
                words[(i * 7 + 3) % 12]
            );
            out.push(PromptRecord::new(format!("{agent}-{i}"), agent, text));
        }
    }
    out
}

pub fn write_prompts(path: &Path, prompts: &[PromptRecord]) {
    write_jsonl(path, prompts).unwrap();
}
