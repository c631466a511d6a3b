use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which stage produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Sparse,
    Dense,
    Reranker,
    Fused,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Sparse => "sparse",
            Provenance::Dense => "dense",
            Provenance::Reranker => "reranker",
            Provenance::Fused => "fused",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(Provenance::Sparse),
            "dense" => Ok(Provenance::Dense),
            "reranker" => Ok(Provenance::Reranker),
            "fused" => Ok(Provenance::Fused),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: usize,
    pub score: f64,
    pub provenance: Provenance,
}

impl ScoredPassage {
    pub fn new(passage_id: usize, score: f64, provenance: Provenance) -> Self {
        Self {
            passage_id,
            score,
            provenance,
        }
    }
}

/// Score descending, then passage id ascending.
pub fn rank_order(a_id: usize, a_score: f64, b_id: usize, b_score: f64) -> Ordering {
    b_score.total_cmp(&a_score).then(a_id.cmp(&b_id))
}

/// Sorts in place by [`rank_order`].
pub fn sort_ranked(list: &mut [ScoredPassage]) {
    list.sort_by(|a, b| rank_order(a.passage_id, a.score, b.passage_id, b.score));
}

/// Top `n` entries of a dense score vector (index = passage id).
pub fn top_n(scores: &[f64], n: usize, provenance: Provenance) -> Vec<ScoredPassage> {
    let n = n.min(scores.len());
    if n == 0 {
        return Vec::new();
    }
    let cmp = |a: &usize, b: &usize| rank_order(*a, scores[*a], *b, scores[*b]);
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    if n < ids.len() {
        ids.select_nth_unstable_by(n - 1, cmp);
        ids.truncate(n);
    }
    ids.sort_unstable_by(cmp);
    ids.into_iter()
        .map(|id| ScoredPassage::new(id, scores[id], provenance))
        .collect()
}
