//! Reference relevance scoring: FNV-1a feature hashing into 256 signed
//! buckets, cosine similarity, token-set Jaccard and the weighted blend.

use std::collections::BTreeSet;

use rand::Rng;

use crate::docs::words;

pub const DIM: usize = 256;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    for t in tokens(text) {
        let h = fnv1a64(t.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % DIM as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = tokens(a).into_iter().collect();
    let b: BTreeSet<String> = tokens(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub fn blended(cosine: f64, jaccard: f64) -> f64 {
    0.7 * cosine.max(0.0) + 0.3 * jaccard
}

#[derive(Debug, Clone)]
pub struct RefEntry {
    pub entry_id: String,
    pub title: String,
    pub abstract_text: String,
}

impl RefEntry {
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

pub fn synthetic_corpus(rng: &mut impl Rng, n: usize) -> Vec<RefEntry> {
    (0..n)
        .map(|i| RefEntry {
            entry_id: format!("e{i:04}"),
            title: words(rng, 3, 8),
            abstract_text: format!("{}.", words(rng, 15, 40)),
        })
        .collect()
}

/// Exhaustive ranking: cosine over every entry keeps the best `candidates`
/// (ties by id), those are re-scored by the blend, and the best `k` returned
/// as `(entry_id, cosine, score)`.
pub fn rank(corpus: &[RefEntry], query: &str, candidates: usize, k: usize) -> Vec<(String, f64, f64)> {
    let q = embed(query);
    let mut scored: Vec<(String, f64, String)> =
        corpus.iter().map(|e| (e.entry_id.clone(), cosine(&q, &embed(&e.text())), e.text())).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(candidates);
    let mut out: Vec<(String, f64, f64)> =
        scored.into_iter().map(|(id, c, text)| (id, c, blended(c, jaccard(query, &text)))).collect();
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    out
}
