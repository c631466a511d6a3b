//! Brute-force oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the index or pipeline code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use triplet_retrieval::corpus::{Corpus, Passage, Triplet};
use triplet_retrieval::harness::McqaExample;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn toy_kg_path() -> PathBuf {
    workspace_root().join("data/toy/toy_kg.tsv")
}

pub fn toy_questions() -> Vec<McqaExample> {
    let text = fs::read_to_string(workspace_root().join("data/toy/toy_questions.jsonl")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn test_data(name: &str) -> PathBuf {
    workspace_root().join("crates/core/tests/data").join(name)
}

/// Corpus whose passage texts are exactly `texts` (placeholder sources).
pub fn corpus_from_texts<S: AsRef<str>>(texts: &[S]) -> Corpus {
    let passages = texts
        .iter()
        .enumerate()
        .map(|(id, t)| Passage {
            id,
            text: t.as_ref().to_owned(),
            source: Triplet::new(t.as_ref(), "Text", id.to_string()),
        })
        .collect();
    Corpus::from_passages(passages).unwrap()
}

/// Lowercase, split on anything that is not a letter or digit.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Okapi BM25 with the epsilon-floored IDF, evaluated term by term straight
/// from the formula.
pub fn oracle_bm25(texts: &[String], query: &str, k1: f64, b: f64, epsilon: f64) -> Vec<f64> {
    let docs: Vec<Vec<String>> = texts.iter().map(|t| oracle_tokens(t)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        for t in d.iter().map(String::as_str).collect::<BTreeSet<_>>() {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let raw: BTreeMap<&str, f64> = df
        .iter()
        .map(|(t, &f)| (*t, ((n - f as f64 + 0.5) / (f as f64 + 0.5)).ln()))
        .collect();
    let mean = raw.values().sum::<f64>() / raw.len().max(1) as f64;
    let idf = |t: &str| -> f64 {
        match raw.get(t) {
            Some(&v) if v < 0.0 => epsilon * mean,
            Some(&v) => v,
            None => 0.0,
        }
    };

    let q = oracle_tokens(query);
    docs.iter()
        .map(|d| {
            let dl = d.len() as f64;
            q.iter()
                .map(|term| {
                    let tf = d.iter().filter(|x| *x == term).count() as f64;
                    if tf == 0.0 {
                        0.0
                    } else {
                        idf(term) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
                    }
                })
                .sum()
        })
        .collect()
}

/// Ids sorted by score descending; the stable sort over ascending ids gives
/// the id tie-break.
pub fn oracle_rank(scores: &[f64], n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    ids.truncate(n);
    ids
}

pub fn oracle_dot_matrix(rows: &[Vec<f32>], query: &[f32]) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            let mut acc = 0.0f64;
            for i in 0..r.len() {
                acc += r[i] as f64 * query[i] as f64;
            }
            acc
        })
        .collect()
}

/// No-rerank fusion applied literally: average when both lists have the
/// passage, otherwise substitute the other list's lowest score.
pub fn oracle_fuse(sparse: &[(usize, f64)], dense: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let low_sparse = sparse.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let low_dense = dense.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let mut all: Vec<usize> = sparse.iter().chain(dense).map(|x| x.0).collect();
    all.sort();
    all.dedup();
    let mut out: Vec<(usize, f64)> = all
        .into_iter()
        .map(|id| {
            let s = sparse.iter().find(|x| x.0 == id).map_or(low_sparse, |x| x.1);
            let d = dense.iter().find(|x| x.0 == id).map_or(low_dense, |x| x.1);
            (id, (s + d) / 2.0)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    out
}

/// Jaccard overlap of lowercase token sets, recomputed independently of the
/// stub reranker.
pub fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let x: BTreeSet<String> = oracle_tokens(a).into_iter().collect();
    let y: BTreeSet<String> = oracle_tokens(b).into_iter().collect();
    let union = x.union(&y).count();
    if union == 0 {
        0.0
    } else {
        x.intersection(&y).count() as f64 / union as f64
    }
}

/// Checks that `ids` (a full ranking) orders passages by oracle score,
/// allowing pairs whose oracle scores differ by at most `tol` in either
/// order. Passages with identical `scores` must appear in ascending id
/// order.
pub fn assert_rank_consistent(ids: &[usize], scores: &[f64], oracle: &[f64], tol: f64) {
    for w in ids.windows(2) {
        let (a, b) = (w[0], w[1]);
        assert!(
            oracle[a] >= oracle[b] - tol,
            "passage {a} ({}) ranked above {b} ({})",
            oracle[a],
            oracle[b]
        );
        if scores[a] == scores[b] {
            assert!(a < b, "tie between {a} and {b} not broken by id");
        }
    }
}

use std::fs::File;
use std::io::BufReader;

use triplet_retrieval::corpus::{build_corpus, parse_triplets, RelationTemplateTable};
use triplet_retrieval::dense::{build_dense_index, DenseIndex};
use triplet_retrieval::provider::HashingProvider;
use triplet_retrieval::sparse::{build_sparse_index, Bm25Params, SparseIndex};

pub const TOY_DIM: usize = 256;

/// Toy corpus with both indexes; dense side uses the hashing encoder.
pub struct ToyKit {
    pub corpus: Corpus,
    pub sparse: SparseIndex,
    pub dense: DenseIndex,
    pub provider: HashingProvider,
}

pub fn toy_kit() -> ToyKit {
    let triplets = parse_triplets(BufReader::new(File::open(toy_kg_path()).unwrap())).unwrap();
    let corpus = build_corpus(&triplets, &RelationTemplateTable::conceptnet()).unwrap();
    let provider = HashingProvider::new(TOY_DIM).unwrap();
    let sparse = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
    let dense = build_dense_index(&corpus, &provider, 16).unwrap();
    ToyKit {
        corpus,
        sparse,
        dense,
        provider,
    }
}
