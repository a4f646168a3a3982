use serde::{Deserialize, Serialize};

use super::{CorpusIndex, RankedHit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub label: String,
    pub entry_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchMap {
    pub clusters: Vec<Cluster>,
    pub takeaways: Vec<String>,
}

/// Greedy clustering: the best-ranked unclustered hit seeds a cluster and
/// absorbs every unclustered hit whose embedding cosine with the seed is at
/// least `threshold`. Returns entry-id groups, seed first; the groups
/// partition the hits (duplicate ids count once).
pub fn cluster_hits(index: &CorpusIndex, hits: &[RankedHit], threshold: f64) -> Vec<Vec<String>> {
    let mut order: Vec<&RankedHit> = Vec::new();
    for h in hits {
        if !order.iter().any(|o| o.entry_id == h.entry_id) {
            order.push(h);
        }
    }
    order.sort_by(|a, b| {
        let (sa, sb) = (a.rerank_score.unwrap_or(a.cosine), b.rerank_score.unwrap_or(b.cosine));
        sb.total_cmp(&sa).then_with(|| a.entry_id.cmp(&b.entry_id))
    });
    let mut taken = vec![false; order.len()];
    let mut clusters = Vec::new();
    for s in 0..order.len() {
        if taken[s] {
            continue;
        }
        taken[s] = true;
        let seed = index.vector(&order[s].entry_id);
        let mut group = vec![order[s].entry_id.clone()];
        for j in s + 1..order.len() {
            if taken[j] {
                continue;
            }
            let sim = match (seed, index.vector(&order[j].entry_id)) {
                (Some(a), Some(b)) => a.dot(b),
                _ => 0.0,
            };
            if sim >= threshold {
                taken[j] = true;
                group.push(order[j].entry_id.clone());
            }
        }
        clusters.push(group);
    }
    clusters
}
