//! Literature retrieval: feature-hashed embeddings, exhaustive cosine search
//! and a lexical re-ranking stage.
//!
//! Arithmetic order is fixed (tokens accumulate in text order, dot products
//! run over dimensions in order) so scores are bit-identical everywhere.

mod compare;
mod corpus;
mod map;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{render_comparison_table, Aspect, AspectComparison, ComparisonReport, Overlap};
pub use corpus::{read_corpus, write_corpus, CORPUS_FORMAT, CORPUS_VERSION};
pub use map::{cluster_hits, Cluster, ResearchMap};

pub const DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub entry_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub affiliations: Vec<String>,
    pub year: i64,
    #[serde(default)]
    pub venue: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl CorpusEntry {
    /// The text that is embedded and compared against queries.
    pub fn search_text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

pub fn embed_text(text: &str) -> EmbeddingVector {
    let mut v = vec![0.0f64; DIM];
    for tok in tokenize(text) {
        let h = fnv1a(tok.as_bytes());
        v[(h % DIM as u64) as usize] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    EmbeddingVector(v)
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub entry_id: String,
    pub cosine: f64,
    /// Set by [`rerank`]; absent straight out of the cosine stage.
    pub rerank_score: Option<f64>,
    pub relevance_note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub cosine_weight: f64,
    pub lexical_weight: f64,
    /// Cosine-stage candidates handed to the re-ranker (at least `k`).
    pub candidates: usize,
    pub cluster_threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { cosine_weight: 0.7, lexical_weight: 0.3, candidates: 50, cluster_threshold: 0.5 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("entry `{0}` has an empty title")]
    EmptyTitle(String),
    #[error("corpus line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("no matching entry")]
    NotFound,
    #[error("corpus I/O: {0}")]
    Io(String),
}

/// Immutable once built; safe to share between readers.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    entries: Vec<CorpusEntry>,
    vectors: Vec<EmbeddingVector>,
    tokens: Vec<BTreeSet<String>>,
}

pub fn index_corpus(entries: Vec<CorpusEntry>) -> Result<CorpusIndex, CorpusError> {
    let mut ids = HashSet::new();
    for e in &entries {
        if e.title.trim().is_empty() {
            return Err(CorpusError::EmptyTitle(e.entry_id.clone()));
        }
        if !ids.insert(e.entry_id.as_str()) {
            return Err(CorpusError::DuplicateId(e.entry_id.clone()));
        }
    }
    let texts: Vec<String> = entries.iter().map(CorpusEntry::search_text).collect();
    Ok(CorpusIndex {
        vectors: texts.iter().map(|t| embed_text(t)).collect(),
        tokens: texts.iter().map(|t| token_set(t)).collect(),
        entries,
    })
}

fn by_score_then_id(a: (f64, &str), b: (f64, &str)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.entry_id == id)
    }

    pub fn entry(&self, id: &str) -> Option<&CorpusEntry> {
        self.position(id).map(|i| &self.entries[i])
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.position(id).map(|i| &self.vectors[i])
    }

    /// Top `k` entries by cosine with the query, ties by entry id.
    pub fn search(&self, query: &str, k: usize) -> Vec<RankedHit> {
        let q = embed_text(query);
        let mut scored: Vec<(f64, usize)> = self.vectors.iter().map(|v| q.dot(v)).zip(0..).collect();
        scored.sort_by(|a, b| by_score_then_id((a.0, &self.entries[a.1].entry_id), (b.0, &self.entries[b.1].entry_id)));
        scored
            .into_iter()
            .take(k)
            .map(|(cosine, i)| RankedHit {
                entry_id: self.entries[i].entry_id.clone(),
                cosine,
                rerank_score: None,
                relevance_note: String::new(),
            })
            .collect()
    }

    /// Scores hits by the weighted blend of clamped cosine and query/entry
    /// token Jaccard, and re-sorts. Each hit gets a note naming shared terms.
    pub fn rerank(&self, hits: Vec<RankedHit>, query: &str, cfg: &RetrievalConfig) -> Vec<RankedHit> {
        let q = token_set(query);
        let mut out: Vec<RankedHit> = hits
            .into_iter()
            .map(|mut h| {
                let toks = self.position(&h.entry_id).map(|i| &self.tokens[i]);
                let lexical = toks.map_or(0.0, |t| jaccard(&q, t));
                h.rerank_score = Some(cfg.cosine_weight * h.cosine.max(0.0) + cfg.lexical_weight * lexical);
                if h.relevance_note.is_empty() {
                    let shared: Vec<&str> =
                        toks.map(|t| q.intersection(t).map(String::as_str).collect()).unwrap_or_default();
                    h.relevance_note = if shared.is_empty() {
                        "no shared terms".into()
                    } else {
                        format!("shared terms: {}", shared.join(", "))
                    };
                }
                h
            })
            .collect();
        out.sort_by(|a, b| {
            by_score_then_id((a.rerank_score.unwrap_or(0.0), &a.entry_id), (b.rerank_score.unwrap_or(0.0), &b.entry_id))
        });
        out
    }

    /// Cosine stage over `max(cfg.candidates, k)` candidates, then re-ranking; best `k` returned.
    pub fn retrieve(&self, query: &str, k: usize, cfg: &RetrievalConfig) -> Vec<RankedHit> {
        let mut hits = self.rerank(self.search(query, cfg.candidates.max(k)), query, cfg);
        hits.truncate(k);
        hits
    }

    /// The best re-ranked match for `query`.
    pub fn lookup_reference(&self, query: &str, cfg: &RetrievalConfig) -> Result<&CorpusEntry, CorpusError> {
        let hit = self.retrieve(query, 1, cfg).into_iter().next().ok_or(CorpusError::NotFound)?;
        self.entry(&hit.entry_id).ok_or(CorpusError::NotFound)
    }
}
