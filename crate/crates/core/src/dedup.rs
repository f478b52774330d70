//! MinHash near-duplicate removal for prompt datasets.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::PromptRecord;
use crate::embedding::{splitmix64, tokenize};
use crate::error::{Error, Result};

/// Word shingles of a single text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    shingles: BTreeSet<String>,
    width: usize,
}

impl ShingleSet {
    pub fn from_shingles<I: IntoIterator<Item = String>>(shingles: I, width: usize) -> Result<Self> {
        let shingles: BTreeSet<String> = shingles.into_iter().collect();
        if shingles.is_empty() {
            return Err(Error::InvalidInput("empty shingle set".into()));
        }
        Ok(Self { shingles, width })
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.shingles.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Exact Jaccard similarity |A ∩ B| / |A ∪ B|.
    pub fn jaccard(&self, other: &ShingleSet) -> f64 {
        let inter = self.shingles.intersection(&other.shingles).count();
        let union = self.shingles.len() + other.shingles.len() - inter;
        inter as f64 / union as f64
    }
}

/// Windows of `width` consecutive lowercase tokens. Texts shorter than the
/// window yield a single shingle holding every token.
pub fn shingle(text: &str, width: usize) -> Result<ShingleSet> {
    if width == 0 {
        return Err(Error::InvalidInput("shingle width must be at least 1".into()));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot shingle empty text".into()));
    }
    let shingles: BTreeSet<String> = if tokens.len() < width {
        std::iter::once(tokens.join(" ")).collect()
    } else {
        tokens.windows(width).map(|w| w.join(" ")).collect()
    };
    Ok(ShingleSet { shingles, width })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    mins: Vec<u64>,
    seed: u64,
}

impl MinHashSignature {
    pub fn mins(&self) -> &[u64] {
        &self.mins
    }

    pub fn num_hashes(&self) -> usize {
        self.mins.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Seeds of the `h` hash functions derived from one master seed.
pub fn hash_seeds(h: usize, seed: u64) -> Vec<u64> {
    let mut state = seed;
    (0..h).map(|_| splitmix64(&mut state)).collect()
}

/// Value of hash function `i` (seeded by `hash_seed`) on one shingle.
pub fn shingle_hash(shingle: &str, hash_seed: u64) -> u64 {
    xxh3_64_with_seed(shingle.as_bytes(), hash_seed)
}

pub fn minhash_signature(set: &ShingleSet, h: usize, seed: u64) -> Result<MinHashSignature> {
    if h == 0 {
        return Err(Error::InvalidInput("need at least one hash function".into()));
    }
    if set.is_empty() {
        return Err(Error::InvalidInput("empty shingle set".into()));
    }
    let seeds = hash_seeds(h, seed);
    let mut mins = vec![u64::MAX; h];
    for s in set.iter() {
        for (slot, &hs) in mins.iter_mut().zip(&seeds) {
            *slot = (*slot).min(shingle_hash(s, hs));
        }
    }
    Ok(MinHashSignature { mins, seed })
}

/// Fraction of signature positions that agree.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.mins.len() != b.mins.len() || a.seed != b.seed {
        return Err(Error::Contract(format!(
            "signatures differ in shape: h {} vs {}, seed {} vs {}",
            a.mins.len(),
            b.mins.len(),
            a.seed,
            b.seed
        )));
    }
    let agree = a.mins.iter().zip(&b.mins).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.mins.len() as f64)
}

/// How candidate pairs are found.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateIndex {
    /// Compare against every retained prompt.
    #[default]
    Pairwise,
    /// LSH band buckets sized so no pair at or above the threshold is missed.
    Banded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupParams {
    pub width: usize,
    pub num_hashes: usize,
    pub seed: u64,
    pub threshold: f64,
    pub index: CandidateIndex,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            width: 3,
            num_hashes: 128,
            seed: 0,
            threshold: 0.8,
            index: CandidateIndex::Pairwise,
        }
    }
}

impl DedupParams {
    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.width == 0 || self.num_hashes == 0 {
            return Err(Error::InvalidConfig(
                "shingle width and hash count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Smallest number of agreeing positions whose estimate reaches the threshold.
    fn min_agreements(&self) -> usize {
        let h = self.num_hashes;
        (0..=h)
            .find(|&a| a as f64 / h as f64 >= self.threshold)
            .unwrap_or(h)
    }

    /// Rows per band such that a pair reaching the threshold must agree on
    /// at least one whole band (pigeonhole over the disagreeing positions).
    pub fn lossless_band_rows(&self) -> usize {
        let h = self.num_hashes;
        let needed_bands = h - self.min_agreements() + 1;
        (1..=h)
            .rev()
            .find(|&r| h.div_ceil(r) >= needed_bands)
            .unwrap_or(1)
    }
}

/// One removed prompt and the retained prompt it matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupMatch {
    pub dropped: String,
    pub kept: String,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub retained: Vec<PromptRecord>,
    pub report: Vec<DedupMatch>,
}

struct BandIndex {
    rows: usize,
    buckets: HashMap<(usize, u64), Vec<usize>>,
}

impl BandIndex {
    fn band_keys(&self, sig: &MinHashSignature) -> Vec<(usize, u64)> {
        sig.mins
            .chunks(self.rows)
            .enumerate()
            .map(|(band, rows)| {
                let bytes: Vec<u8> = rows.iter().flat_map(|v| v.to_le_bytes()).collect();
                (band, xxh3_64_with_seed(&bytes, band as u64))
            })
            .collect()
    }
}

/// Drops every prompt whose estimated Jaccard against an earlier retained
/// prompt reaches the threshold. First occurrence wins; retained order is
/// input order.
pub fn deduplicate(prompts: &[PromptRecord], params: &DedupParams) -> Result<DedupOutcome> {
    params.validate()?;
    let min_agree = params.min_agreements();
    let mut retained = Vec::with_capacity(prompts.len());
    let mut report = Vec::new();
    // (index into `retained`, signature) for prompts that could be shingled
    let mut kept_sigs: Vec<(usize, MinHashSignature)> = Vec::new();
    let mut bands = match params.index {
        CandidateIndex::Pairwise => None,
        CandidateIndex::Banded => Some(BandIndex {
            rows: params.lossless_band_rows(),
            buckets: HashMap::new(),
        }),
    };

    for record in prompts {
        let sig = match shingle(&record.text, params.width)
            .and_then(|s| minhash_signature(&s, params.num_hashes, params.seed))
        {
            Ok(sig) => sig,
            Err(e) => {
                log::warn!("prompt {:?} kept without dedup: {e}", record.id);
                retained.push(record.clone());
                continue;
            }
        };

        let (candidates, keys): (Vec<usize>, Vec<(usize, u64)>) = match &bands {
            None => ((0..kept_sigs.len()).collect(), Vec::new()),
            Some(index) => {
                let keys = index.band_keys(&sig);
                let mut c: Vec<usize> = keys
                    .iter()
                    .filter_map(|k| index.buckets.get(k))
                    .flatten()
                    .copied()
                    .collect();
                c.sort_unstable();
                c.dedup();
                (c, keys)
            }
        };

        let mut best: Option<(usize, usize)> = None;
        for ci in candidates {
            let agree = kept_sigs[ci]
                .1
                .mins
                .iter()
                .zip(&sig.mins)
                .filter(|(a, b)| a == b)
                .count();
            if agree >= min_agree && best.is_none_or(|(_, b)| agree > b) {
                best = Some((ci, agree));
            }
        }

        match best {
            Some((ci, agree)) => report.push(DedupMatch {
                dropped: record.id.clone(),
                kept: retained[kept_sigs[ci].0].id.clone(),
                estimate: agree as f64 / params.num_hashes as f64,
            }),
            None => {
                let slot = kept_sigs.len();
                if let Some(index) = bands.as_mut() {
                    for key in keys {
                        index.buckets.entry(key).or_default().push(slot);
                    }
                }
                kept_sigs.push((retained.len(), sig));
                retained.push(record.clone());
            }
        }
    }
    Ok(DedupOutcome { retained, report })
}
