//! Stage-1 coarse routing: keyword tag extraction, hashed text embeddings,
//! flat cosine retrieval and the coarse eligibility mask.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Result, SimError};
use crate::mesh::{ComputeClass, Registry};

pub const EMBED_DIM: usize = 768;

pub const DEFAULT_CORPUS: &str = include_str!("../data/default_corpus.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSpec {
    pub id: String,
    pub display_name: String,
    pub categories: Vec<Category>,
    pub capability_text: String,
    pub compute_class: ComputeClass,
    pub max_payload: u64,
}

/// Lexicons, retrieval settings and expert descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub schema_version: u32,
    pub hash_seed: u64,
    pub top_k: usize,
    pub threshold: f64,
    pub lexicons: BTreeMap<Category, Vec<String>>,
    pub experts: Vec<ExpertSpec>,
}

impl Corpus {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Corpus = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn default_corpus() -> Self {
        Self::from_toml(DEFAULT_CORPUS).expect("shipped corpus parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(SimError::Config(format!("unsupported corpus schema {}", self.schema_version)));
        }
        if self.top_k < 1 {
            return Err(SimError::Config("top_k must be at least 1".into()));
        }
        if self.experts.is_empty() {
            return Err(SimError::Config("corpus lists no experts".into()));
        }
        for e in &self.experts {
            if e.categories.is_empty() {
                return Err(SimError::Config(format!("expert '{}' has no task category", e.id)));
            }
        }
        Ok(())
    }

    pub fn lexicon(&self, c: Category) -> &[String] {
        self.lexicons.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Synthetic query: a category, its instruction and a generator seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub category: Category,
    pub instruction_text: String,
    pub difficulty: f64,
    pub seed: u64,
}

pub(crate) fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Category with the most lexicon hits; ties go to the earlier category and
/// zero hits fall back to `general`.
pub fn extract_tag(text: &str, corpus: &Corpus) -> Result<Category> {
    if text.trim().is_empty() {
        return Err(SimError::Empty("instruction text".into()));
    }
    let mut counts = [0usize; Category::COUNT];
    for tok in tokenize(text) {
        for c in Category::ALL {
            if corpus.lexicon(c).iter().any(|w| *w == tok) {
                counts[c.index()] += 1;
            }
        }
    }
    let mut best = Category::General;
    let mut best_count = 0;
    for c in Category::ALL {
        if counts[c.index()] > best_count {
            best = c;
            best_count = counts[c.index()];
        }
    }
    Ok(best)
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Signed feature hashing of the token bag into 768 dims, L2-normalised.
pub fn embed_text(text: &str, hash_seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    let mut any = false;
    for tok in tokenize(text) {
        any = true;
        let h = fnv1a(hash_seed, tok.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % EMBED_DIM as u64) as usize] += sign;
    }
    if !any {
        let h = fnv1a(hash_seed, text.as_bytes());
        v[(h % EMBED_DIM as u64) as usize] = 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every token cancelled; fall back to the raw string
        let h = fnv1a(hash_seed, text.as_bytes());
        v[(h % EMBED_DIM as u64) as usize] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Exhaustive scan: entries with similarity ≥ `threshold`, best first
/// (ties keep entry order), at most `top_k`.
pub fn index_query<'a>(
    query: &[f64],
    entries: &'a [(String, Vec<f64>)],
    top_k: usize,
    threshold: f64,
) -> Result<Vec<(&'a str, f64)>> {
    if top_k < 1 {
        return Err(SimError::Config("top_k must be at least 1".into()));
    }
    let mut hits: Vec<(usize, f64)> = entries
        .iter()
        .enumerate()
        .map(|(i, (_, e))| (i, cosine(query, e)))
        .filter(|(_, s)| *s >= threshold)
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.truncate(top_k);
    Ok(hits.into_iter().map(|(i, s)| (entries[i].0.as_str(), s)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseMask {
    pub bits: Vec<u8>,
    /// True when neither retrieval nor category matching selected anything.
    pub fallback: bool,
}

impl CoarseMask {
    pub fn all_ones(n: usize) -> Self {
        Self {
            bits: vec![1; n],
            fallback: false,
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.bits[i] == 1
    }
}

/// Union of retrieval hits on the instruction embedding and experts
/// advertising the extracted tag. Never all-zero.
pub fn coarse_mask(instruction: &str, tag: Category, registry: &Registry, corpus: &Corpus) -> Result<CoarseMask> {
    let n = registry.len();
    if n == 0 {
        return Err(SimError::Config("registry is empty".into()));
    }
    let query = embed_text(instruction, corpus.hash_seed);
    let entries = registry.embedding_index();
    let hits = index_query(&query, &entries, corpus.top_k, corpus.threshold)?;
    let mut bits = vec![0u8; n];
    for (id, _) in hits {
        if let Some(i) = registry.index_of(id) {
            bits[i] = 1;
        }
    }
    for (i, d) in registry.descriptors().enumerate() {
        if d.task_categories.contains(&tag) {
            bits[i] = 1;
        }
    }
    if bits.iter().all(|&b| b == 0) {
        return Ok(CoarseMask {
            bits: vec![1; n],
            fallback: true,
        });
    }
    Ok(CoarseMask { bits, fallback: false })
}
