//! Per-(question, choice) retrieval: hybrid BM25 + dense candidates,
//! cross-encoder reranking (or score fusion when reranking is off),
//! optional CommonsenseQA filtering, and top-K selection.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RELATED_TO};
use crate::dense::DenseIndex;
use crate::error::{Error, Result};
use crate::provider::{EmbedRole, EmbeddingProvider};
use crate::ranking::{sort_ranked, Provenance, ScoredPassage};
use crate::scorer::RerankScorer;
use crate::sparse::SparseIndex;
use crate::text::token_set;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalQuery {
    question: String,
    choice: String,
}

impl RetrievalQuery {
    pub fn new(question: impl Into<String>, choice: impl Into<String>) -> Result<Self> {
        let question = question.into();
        let choice = choice.into();
        if question.trim().is_empty() {
            return Err(Error::InvalidQuery("question is empty"));
        }
        if choice.trim().is_empty() {
            return Err(Error::InvalidQuery("choice is empty"));
        }
        Ok(Self { question, choice })
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn choice(&self) -> &str {
        &self.choice
    }
}

/// `question + " " + choice`, used for BM25, the query encoder and the
/// reranker alike.
pub fn make_query_text(query: &RetrievalQuery) -> String {
    format!("{} {}", query.question, query.choice)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    #[default]
    None,
    Csqa,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::None => "none",
            FilterMode::Csqa => "csqa",
        })
    }
}

impl FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FilterMode::None),
            "csqa" => Ok(FilterMode::Csqa),
            other => Err(format!("unknown filter mode `{other}` (expected none|csqa)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Passages taken from each retriever (N).
    pub n_per_retriever: usize,
    /// Passages kept for the reader (K).
    pub top_k: usize,
    pub rerank_enabled: bool,
    pub filter_mode: FilterMode,
}

impl PipelineConfig {
    /// N = 100, K = 100, reranking on, RelatedTo/overlap filter on.
    pub fn commonsense_qa() -> Self {
        Self {
            n_per_retriever: 100,
            top_k: 100,
            rerank_enabled: true,
            filter_mode: FilterMode::Csqa,
        }
    }

    /// N = 100, K = 20, reranking on, no filter.
    pub fn openbook_qa() -> Self {
        Self {
            n_per_retriever: 100,
            top_k: 20,
            rerank_enabled: true,
            filter_mode: FilterMode::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_retriever == 0 {
            return Err(Error::InvalidParam("N must be >= 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParam("K must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw output of both retrievers, each in its native order.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridCandidates {
    pub sparse: Vec<ScoredPassage>,
    pub dense: Vec<ScoredPassage>,
}

impl HybridCandidates {
    /// Distinct passage ids over both lists, ascending.
    pub fn unique_ids(&self) -> Vec<usize> {
        self.sparse
            .iter()
            .chain(&self.dense)
            .map(|s| s.passage_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

pub fn hybrid_retrieve(
    query: &RetrievalQuery,
    sparse: &SparseIndex,
    dense: &DenseIndex,
    provider: &dyn EmbeddingProvider,
    n: usize,
) -> Result<HybridCandidates> {
    let text = make_query_text(query);
    let sparse_list = sparse.search(&text, n);
    let qvec = provider
        .embed(&[text.as_str()], EmbedRole::Query)?
        .pop()
        .ok_or(Error::LengthMismatch { expected: 1, got: 0 })?;
    let dense_list = dense.search(&qvec, n)?;
    Ok(HybridCandidates {
        sparse: sparse_list,
        dense: dense_list,
    })
}

/// Scores each distinct candidate once against the query text and orders by
/// reranker score (ties by id).
pub fn rerank(
    query: &RetrievalQuery,
    candidates: &[usize],
    corpus: &Corpus,
    scorer: &dyn RerankScorer,
) -> Result<Vec<ScoredPassage>> {
    let ids: Vec<usize> = candidates
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let texts = ids
        .iter()
        .map(|&id| {
            corpus
                .get(id)
                .map(|p| p.text.as_str())
                .ok_or_else(|| Error::Format(format!("candidate {id} not in corpus")))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = scorer.score_pairs(&make_query_text(query), &texts)?;
    if scores.len() != ids.len() {
        return Err(Error::LengthMismatch {
            expected: ids.len(),
            got: scores.len(),
        });
    }
    let mut out = Vec::with_capacity(ids.len());
    for (id, score) in ids.into_iter().zip(scores) {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::ScoreOutOfRange {
                passage_id: id,
                score,
            });
        }
        out.push(ScoredPassage::new(id, score, Provenance::Reranker));
    }
    sort_ranked(&mut out);
    Ok(out)
}

/// Combines both lists without a reranker: a passage retrieved by both gets
/// the mean of its two scores; a passage missing from one list borrows that
/// list's lowest score and is averaged the same way.
pub fn fuse_without_rerank(
    sparse: &[ScoredPassage],
    dense: &[ScoredPassage],
) -> Result<Vec<ScoredPassage>> {
    let min_of = |list: &[ScoredPassage]| {
        list.iter()
            .map(|s| s.score)
            .min_by(f64::total_cmp)
            .ok_or(Error::EmptyList)
    };
    let sparse_floor = min_of(sparse)?;
    let dense_floor = min_of(dense)?;

    let sparse_scores: HashMap<usize, f64> = sparse.iter().map(|s| (s.passage_id, s.score)).collect();
    let dense_scores: HashMap<usize, f64> = dense.iter().map(|s| (s.passage_id, s.score)).collect();

    let ids: BTreeSet<usize> = sparse_scores.keys().chain(dense_scores.keys()).copied().collect();
    let mut out: Vec<ScoredPassage> = ids
        .into_iter()
        .map(|id| {
            let s = sparse_scores.get(&id).copied().unwrap_or(sparse_floor);
            let d = dense_scores.get(&id).copied().unwrap_or(dense_floor);
            ScoredPassage::new(id, (s + d) / 2.0, Provenance::Fused)
        })
        .collect();
    sort_ranked(&mut out);
    Ok(out)
}

/// Drops passages whose source relation is `RelatedTo` and passages that
/// share no token with any answer choice. Survivor order is kept.
pub fn filter_csqa(
    ranked: &[ScoredPassage],
    corpus: &Corpus,
    all_choices: &[impl AsRef<str>],
) -> Vec<ScoredPassage> {
    let choice_tokens: BTreeSet<String> = all_choices
        .iter()
        .flat_map(|c| token_set(c.as_ref()))
        .collect();
    ranked
        .iter()
        .filter(|s| {
            let Some(p) = corpus.get(s.passage_id) else {
                return false;
            };
            p.source.relation != RELATED_TO
                && token_set(&p.text).iter().any(|t| choice_tokens.contains(t))
        })
        .copied()
        .collect()
}

pub fn select_top_k(ranked: &[ScoredPassage], k: usize) -> Vec<ScoredPassage> {
    ranked[..k.min(ranked.len())].to_vec()
}

/// Everything needed to answer retrieval queries against one corpus.
pub struct Retriever<'a> {
    corpus: &'a Corpus,
    sparse: &'a SparseIndex,
    dense: &'a DenseIndex,
    provider: &'a dyn EmbeddingProvider,
    scorer: Option<&'a dyn RerankScorer>,
}

impl<'a> Retriever<'a> {
    /// Checks that both indexes were built over `corpus` and that the dense
    /// index was built with the same encoder as `provider`.
    pub fn new(
        corpus: &'a Corpus,
        sparse: &'a SparseIndex,
        dense: &'a DenseIndex,
        provider: &'a dyn EmbeddingProvider,
        scorer: Option<&'a dyn RerankScorer>,
    ) -> Result<Self> {
        for (what, digest) in [
            ("sparse index", sparse.corpus_digest()),
            ("dense index", dense.corpus_digest()),
        ] {
            if digest != corpus.digest() {
                return Err(Error::DigestMismatch {
                    what,
                    expected: digest.to_owned(),
                    actual: corpus.digest().to_owned(),
                });
            }
        }
        if dense.fingerprint() != provider.fingerprint() {
            return Err(Error::ProviderMismatch {
                index: dense.fingerprint().to_owned(),
                provider: provider.fingerprint(),
            });
        }
        Ok(Self {
            corpus,
            sparse,
            dense,
            provider,
            scorer,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    pub fn scorer_name(&self) -> Option<String> {
        self.scorer.map(|s| s.name())
    }

    pub fn hybrid(&self, query: &RetrievalQuery, n: usize) -> Result<HybridCandidates> {
        hybrid_retrieve(query, self.sparse, self.dense, self.provider, n)
    }

    /// P_K for one (question, choice) pair. `all_choices` feeds the token
    /// overlap filter and is ignored unless `filter_mode` is `Csqa`.
    pub fn retrieve_for_choice(
        &self,
        query: &RetrievalQuery,
        config: &PipelineConfig,
        all_choices: &[impl AsRef<str>],
    ) -> Result<Vec<ScoredPassage>> {
        config.validate()?;
        let candidates = self.hybrid(query, config.n_per_retriever)?;
        let ranked = if config.rerank_enabled {
            let scorer = self
                .scorer
                .ok_or_else(|| Error::ScorerUnavailable("no rerank scorer configured".into()))?;
            rerank(query, &candidates.unique_ids(), self.corpus, scorer)?
        } else {
            fuse_without_rerank(&candidates.sparse, &candidates.dense)?
        };
        let ranked = match config.filter_mode {
            FilterMode::None => ranked,
            FilterMode::Csqa => filter_csqa(&ranked, self.corpus, all_choices),
        };
        Ok(select_top_k(&ranked, config.top_k))
    }
}

/// A retriever paired with the configuration it runs under.
pub struct Pipeline<'a> {
    pub retriever: Retriever<'a>,
    pub config: PipelineConfig,
}

impl Pipeline<'_> {
    pub fn run(&self, query: &RetrievalQuery, all_choices: &[impl AsRef<str>]) -> Result<Vec<ScoredPassage>> {
        self.retriever.retrieve_for_choice(query, &self.config, all_choices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, RelationTemplateTable, Triplet};

    fn sp(id: usize, score: f64, p: Provenance) -> ScoredPassage {
        ScoredPassage::new(id, score, p)
    }

    struct MapScorer(HashMap<String, f64>);

    impl RerankScorer for MapScorer {
        fn score_pairs(&self, _q: &str, passages: &[&str]) -> Result<Vec<f64>> {
            Ok(passages.iter().map(|p| self.0.get(*p).copied().unwrap_or(0.5)).collect())
        }

        fn name(&self) -> String {
            "map".into()
        }
    }

    struct CountingScorer(std::sync::Mutex<usize>);

    impl RerankScorer for CountingScorer {
        fn score_pairs(&self, _q: &str, passages: &[&str]) -> Result<Vec<f64>> {
            *self.0.lock().unwrap() += passages.len();
            Ok(vec![0.5; passages.len()])
        }

        fn name(&self) -> String {
            "counting".into()
        }
    }

    fn toy_corpus() -> Corpus {
        let table = RelationTemplateTable::conceptnet();
        build_corpus(
            &[
                Triplet::new("hair brush", "AtLocation", "hair"),
                Triplet::new("brush", "RelatedTo", "hair"),
                Triplet::new("dog", "CapableOf", "barking"),
                Triplet::new("bed", "UsedFor", "sleep"),
            ],
            &table,
        )
        .unwrap()
    }

    #[test]
    fn query_text_joins_with_single_space() {
        let q = RetrievalQuery::new("Where do you put a hair brush?", "hair").unwrap();
        assert_eq!(make_query_text(&q), "Where do you put a hair brush? hair");
        assert_eq!(make_query_text(&RetrievalQuery::new("q", "c").unwrap()), "q c");
        assert_eq!(make_query_text(&RetrievalQuery::new("a  b", "c").unwrap()), "a  b c");
    }

    #[test]
    fn empty_query_parts_rejected() {
        assert!(RetrievalQuery::new(" ", "c").is_err());
        assert!(RetrievalQuery::new("q", "").is_err());
    }

    #[test]
    fn rerank_orders_by_score() {
        let corpus = toy_corpus();
        let scorer = MapScorer(HashMap::from([
            (corpus.passages()[0].text.clone(), 0.2),
            (corpus.passages()[1].text.clone(), 0.9),
        ]));
        let q = RetrievalQuery::new("q", "c").unwrap();
        let out = rerank(&q, &[0, 1], &corpus, &scorer).unwrap();
        assert_eq!(out, vec![sp(1, 0.9, Provenance::Reranker), sp(0, 0.2, Provenance::Reranker)]);
    }

    #[test]
    fn rerank_scores_duplicates_once() {
        let corpus = toy_corpus();
        let scorer = CountingScorer(Default::default());
        let q = RetrievalQuery::new("q", "c").unwrap();
        let out = rerank(&q, &[2, 0, 2, 1, 0], &corpus, &scorer).unwrap();
        assert_eq!(*scorer.0.lock().unwrap(), 3);
        let ids: Vec<_> = out.iter().map(|s| s.passage_id).collect();
        assert_eq!(ids, [0, 1, 2]);
    }

    #[test]
    fn rerank_rejects_out_of_range() {
        let corpus = toy_corpus();
        let scorer = MapScorer(HashMap::from([(corpus.passages()[3].text.clone(), 1.5)]));
        let q = RetrievalQuery::new("q", "c").unwrap();
        assert!(matches!(
            rerank(&q, &[3, 0], &corpus, &scorer),
            Err(Error::ScoreOutOfRange { passage_id: 3, .. })
        ));
    }

    #[test]
    fn fusion_examples() {
        let out = fuse_without_rerank(
            &[sp(0, 2.0, Provenance::Sparse)],
            &[sp(0, 4.0, Provenance::Dense)],
        )
        .unwrap();
        assert_eq!(out, vec![sp(0, 3.0, Provenance::Fused)]);

        let out = fuse_without_rerank(
            &[sp(7, 3.0, Provenance::Sparse)],
            &[sp(1, 1.5, Provenance::Dense), sp(2, 1.0, Provenance::Dense)],
        )
        .unwrap();
        let p7 = out.iter().find(|s| s.passage_id == 7).unwrap();
        assert_eq!(p7.score, 2.0);

        let out = fuse_without_rerank(
            &[sp(0, 5.0, Provenance::Sparse)],
            &[sp(0, 5.0, Provenance::Dense)],
        )
        .unwrap();
        assert_eq!(out, vec![sp(0, 5.0, Provenance::Fused)]);

        assert!(matches!(
            fuse_without_rerank(&[], &[sp(0, 1.0, Provenance::Dense)]),
            Err(Error::EmptyList)
        ));
    }

    #[test]
    fn csqa_filter_examples() {
        let corpus = toy_corpus();
        let ranked: Vec<_> = (0..4).map(|i| sp(i, 1.0 - i as f64 * 0.1, Provenance::Reranker)).collect();
        let kept = filter_csqa(&ranked, &corpus, &["hair", "bed", "purse"]);
        let ids: Vec<_> = kept.iter().map(|s| s.passage_id).collect();
        // 1 is RelatedTo, 2 ("dog is capable of barking") shares no token.
        assert_eq!(ids, [0, 3]);
    }

    #[test]
    fn top_k_clamps() {
        let ranked: Vec<_> = (0..5).map(|i| sp(i, 1.0, Provenance::Fused)).collect();
        assert_eq!(select_top_k(&ranked, 2), ranked[..2]);
        assert_eq!(select_top_k(&ranked, 20), ranked);
        assert!(select_top_k(&[], 3).is_empty());
    }

    #[test]
    fn config_presets() {
        let c = PipelineConfig::commonsense_qa();
        assert_eq!((c.n_per_retriever, c.top_k, c.filter_mode), (100, 100, FilterMode::Csqa));
        let o = PipelineConfig::openbook_qa();
        assert_eq!((o.n_per_retriever, o.top_k, o.filter_mode), (100, 20, FilterMode::None));
        assert!(PipelineConfig { top_k: 0, ..o }.validate().is_err());
    }
}
