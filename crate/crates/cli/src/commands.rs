use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use agentrec_core::corpus::{
    build_agent_corpora, load_corpus_cache, save_corpus_cache, split_dataset, validate_dataset, PromptRecord,
    SplitRatios,
};
use agentrec_core::embedding::embed_texts;
use agentrec_core::dedup::{deduplicate, CandidateIndex, DedupParams};
use agentrec_core::jsonl::{read_jsonl, write_jsonl};
use agentrec_core::projection::{export_plot_data, fit_pca, project};
use agentrec_core::sampling::{generate_with_rng, GeneratedPrompt, LogitSourceSpec, SamplingConfig};
use agentrec_core::scoring::{latency_benchmark, score_function_sweep};
use agentrec_core::ScoreConfig;
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{EngineConfig, Overrides};
use crate::server;

#[derive(Debug, Parser)]
#[command(name = "agentrec", version, about = "Recommend the best-suited agent for a prompt")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every command that needs an engine. Each flag
/// overrides the config file and the matching `AGENTREC_*` variable.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// TOML config file
    #[arg(long, env = "AGENTREC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Embedding provider, inline JSON or TOML (e.g. '{"kind":"deterministic-hash","dim":768,"seed":0}')
    #[arg(long)]
    pub provider: Option<String>,
    /// Rephrase service, inline JSON or TOML
    #[arg(long)]
    pub rephrase: Option<String>,
    /// Score function: max, arith, geo, pmeans or pmeans:<p>
    #[arg(long)]
    pub score: Option<String>,
    #[arg(long)]
    pub cache_path: Option<PathBuf>,
    #[arg(long)]
    pub listen_address: Option<String>,
    #[arg(long)]
    pub default_k: Option<usize>,
}

impl EngineArgs {
    pub fn resolve(&self) -> anyhow::Result<EngineConfig> {
        let flags = Overrides {
            provider: self.provider.clone(),
            rephrase: self.rephrase.clone(),
            score: self.score.clone(),
            cache_path: self.cache_path.clone(),
            listen_address: self.listen_address.clone(),
            default_k: self.default_k,
        };
        EngineConfig::resolve(self.config.as_deref(), [Overrides::from_env()?, flags])
    }
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.95)]
    pub nucleus_p: f64,
    #[arg(long, default_value_t = 1.2)]
    pub repetition_penalty: f64,
    #[arg(long, default_value_t = 0.6)]
    pub temperature: f64,
    #[arg(long, default_value_t = 48)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSONL prompt file ({"id","agent","text"} per line)
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Registered agent ids; prompts for other agents are rejected
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<String>>,
    },
    /// Drop near-duplicate prompts (MinHash over word shingles)
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the JSON list of dropped prompts and their matches
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        num_hashes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        /// Use LSH banding instead of comparing every pair
        #[arg(long)]
        banded: bool,
    },
    /// Split into train/test and then finetune/reward, per agent
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_ratio: f64,
        #[arg(long, default_value_t = 0.75)]
        finetune_ratio: f64,
    },
    /// Sample synthetic prompts from a logit source
    Generate {
        /// JSON logit source spec
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        agent: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Embed a prompt dataset and write the corpus cache
    BuildCache {
        #[arg(long)]
        input: PathBuf,
        /// Keep only the first N prompts of each agent
        #[arg(long)]
        per_agent_limit: Option<usize>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Rank agents for one prompt
    Recommend {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Top-k accuracy of one or more score functions on labeled prompts
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "max,arith,geo,pmeans:200")]
        configs: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        ks: Vec<usize>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// PCA of embeddings, written as plot CSV. Fits and projects the prompts
    /// in --input when given, otherwise the cached corpus rows.
    Project {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
        dims: u8,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Measure recommend latency over prompts from a JSONL file
    Bench {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Run the HTTP service
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
    },
}

fn emit(out: &mut dyn Write, value: &impl serde::Serialize) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_prompts(path: &Path) -> anyhow::Result<Vec<PromptRecord>> {
    Ok(read_jsonl(path)?)
}

fn per_agent_counts(records: &[PromptRecord]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.agent.as_str()).or_insert(0) += 1;
    }
    counts
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { input, output, agents } => {
            let records = validate_dataset(read_prompts(&input)?, agents.as_deref())?;
            write_jsonl(&output, &records)?;
            emit(out, &json!({ "records": records.len(), "agents": per_agent_counts(&records) }))
        }
        Command::Dedup {
            input,
            output,
            report,
            width,
            num_hashes,
            seed,
            threshold,
            banded,
        } => {
            let params = DedupParams {
                width,
                num_hashes,
                seed,
                threshold,
                index: if banded {
                    CandidateIndex::Banded
                } else {
                    CandidateIndex::Pairwise
                },
            };
            let prompts = read_prompts(&input)?;
            let outcome = deduplicate(&prompts, &params)?;
            write_jsonl(&output, &outcome.retained)?;
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_vec_pretty(&outcome.report)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            emit(
                out,
                &json!({ "input": prompts.len(), "retained": outcome.retained.len(), "dropped": outcome.report.len() }),
            )
        }
        Command::Split {
            input,
            out_dir,
            seed,
            train_ratio,
            finetune_ratio,
        } => {
            let prompts = read_prompts(&input)?;
            let ratios = SplitRatios {
                train: train_ratio,
                finetune: finetune_ratio,
            };
            let splits = split_dataset(&prompts, ratios, seed)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut sizes = BTreeMap::new();
            for (name, part) in [
                ("train", &splits.train),
                ("test", &splits.test),
                ("finetune", &splits.finetune),
                ("reward", &splits.reward),
            ] {
                write_jsonl(&out_dir.join(format!("{name}.jsonl")), part)?;
                sizes.insert(name, part.len());
            }
            emit(out, &json!({ "seed": seed, "sizes": sizes }))
        }
        Command::Generate {
            source,
            agent,
            count,
            output,
            sampling,
        } => {
            let text = std::fs::read_to_string(&source).with_context(|| format!("reading {}", source.display()))?;
            let spec: LogitSourceSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", source.display()))?;
            let logits = spec.build()?;
            let cfg = SamplingConfig {
                top_k: sampling.top_k,
                nucleus_p: sampling.nucleus_p,
                repetition_penalty: sampling.repetition_penalty,
                temperature: sampling.temperature,
                max_tokens: sampling.max_tokens,
                seed: sampling.seed,
            };
            cfg.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut prompts = Vec::with_capacity(count);
            let mut empty = 0;
            for _ in 0..count {
                let text = generate_with_rng(logits.as_ref(), &cfg, &mut rng)?.text();
                if text.is_empty() {
                    empty += 1;
                    continue;
                }
                prompts.push(GeneratedPrompt {
                    agent: agent.clone(),
                    text,
                });
            }
            if empty > 0 {
                log::warn!("{empty} generations were empty and were skipped");
            }
            write_jsonl(&output, &prompts)?;
            emit(out, &json!({ "generated": prompts.len(), "skipped_empty": empty }))
        }
        Command::BuildCache {
            input,
            per_agent_limit,
            engine,
        } => {
            let cfg = engine.resolve()?;
            let prompts = validate_dataset(read_prompts(&input)?, None)?;
            let embedder = cfg.provider.build()?;
            let corpora = build_agent_corpora(&prompts, embedder.as_ref(), per_agent_limit)?;
            let bytes = save_corpus_cache(&corpora, &cfg.cache_path)?;
            let sizes: BTreeMap<&String, usize> = corpora.iter().map(|(a, c)| (a, c.len())).collect();
            emit(
                out,
                &json!({ "cache_path": cfg.cache_path, "bytes": bytes, "dim": embedder.dim(), "agents": sizes }),
            )
        }
        Command::Recommend { prompt, k, engine } => {
            let cfg = engine.resolve()?;
            let rec = server::engine_from_config(&cfg)?.recommend(&prompt, k.unwrap_or(cfg.default_k))?;
            emit(out, &rec)
        }
        Command::Evaluate {
            input,
            configs,
            ks,
            engine,
        } => {
            let cfg = engine.resolve()?;
            let scores = configs
                .iter()
                .map(|c| c.parse::<ScoreConfig>())
                .collect::<Result<Vec<_>, _>>()?;
            let labeled = validate_dataset(read_prompts(&input)?, None)?;
            let corpora = load_corpus_cache(&cfg.cache_path)?;
            let embedder = cfg.provider.build()?;
            let rows = score_function_sweep(&corpora, &labeled, embedder.as_ref(), &scores, &ks)?;
            emit(out, &rows)
        }
        Command::Project {
            input,
            dims,
            output,
            engine,
        } => {
            let cfg = engine.resolve()?;
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            match input {
                Some(path) => {
                    let prompts = validate_dataset(read_prompts(&path)?, None)?;
                    let texts: Vec<&str> = prompts.iter().map(|p| p.text.as_str()).collect();
                    let embedder = cfg.provider.build()?;
                    for (p, e) in prompts.iter().zip(embed_texts(embedder.as_ref(), &texts)?) {
                        rows.push(e.into_values());
                        labels.push(p.agent.clone());
                    }
                }
                None => {
                    for (agent, corpus) in &load_corpus_cache(&cfg.cache_path)? {
                        for row in corpus.rows() {
                            rows.push(row.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>());
                            labels.push(agent.clone());
                        }
                    }
                }
            }
            let model = fit_pca(&rows, dims as usize)?;
            let points = project(&rows, &model)?;
            let written = export_plot_data(&points, &labels, dims as usize, &output)?;
            emit(out, &json!({ "points": written, "eigenvalues": model.eigenvalues }))
        }
        Command::Bench {
            input,
            repetitions,
            engine,
        } => {
            let cfg = engine.resolve()?;
            let prompts: Vec<String> = read_prompts(&input)?.into_iter().map(|p| p.text).collect();
            if prompts.is_empty() {
                bail!("{} has no prompts", input.display());
            }
            let corpora = load_corpus_cache(&cfg.cache_path)?;
            let report = latency_benchmark(Arc::new(corpora), &prompts, cfg.score, cfg.provider.build()?, repetitions)?;
            emit(out, &report)
        }
        Command::Serve { engine } => {
            let cfg = engine.resolve()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(server::serve(cfg))
        }
    }
}

