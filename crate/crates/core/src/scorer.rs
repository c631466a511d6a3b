//! Cross-encoder reranking scorers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::{agent, fetch_info, join_url, SERVICE_CHUNK};
use crate::text::token_set;

/// Scores `(query, passage)` pairs jointly; every score lies in `[0, 1]`.
pub trait RerankScorer: Send + Sync {
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>>;

    fn name(&self) -> String;
}

/// Jaccard similarity between the token sets of query and passage.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlapScorer;

impl LexicalOverlapScorer {
    pub fn score(query: &str, passage: &str) -> f64 {
        let q = token_set(query);
        let p = token_set(passage);
        let union = q.union(&p).count();
        if union == 0 {
            return 0.0;
        }
        q.intersection(&p).count() as f64 / union as f64
    }
}

impl RerankScorer for LexicalOverlapScorer {
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        Ok(passages.iter().map(|p| Self::score(query, p)).collect())
    }

    fn name(&self) -> String {
        "stub:lexical".into()
    }
}

#[derive(Debug, Serialize)]
pub struct RerankRequest<'a> {
    pub query: &'a str,
    pub passages: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
pub struct RerankResponse {
    pub scores: Vec<f64>,
}

/// Client for the model service's `POST /rerank` route.
pub struct HttpScorer {
    base_url: String,
    agent: ureq::Agent,
    name: String,
}

impl HttpScorer {
    pub fn new(base_url: impl Into<String>) -> Self {
        let base_url = base_url.into();
        let agent = agent();
        let name = match fetch_info(&agent, &base_url).and_then(|i| i.rerank_model) {
            Some(model) => format!("service:{model}"),
            None => format!("service:{base_url}"),
        };
        Self {
            base_url,
            agent,
            name,
        }
    }

    fn score_chunk(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        let resp = self
            .agent
            .post(&join_url(&self.base_url, "rerank"))
            .send_json(RerankRequest { query, passages })
            .map_err(|e| Error::ScorerUnavailable(e.to_string()))?;
        let body: RerankResponse = resp
            .into_json()
            .map_err(|e| Error::ScorerUnavailable(format!("bad /rerank response: {e}")))?;
        if body.scores.len() != passages.len() {
            return Err(Error::LengthMismatch {
                expected: passages.len(),
                got: body.scores.len(),
            });
        }
        Ok(body.scores)
    }
}

impl RerankScorer for HttpScorer {
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(passages.len());
        for chunk in passages.chunks(SERVICE_CHUNK) {
            out.extend(self.score_chunk(query, chunk)?);
        }
        Ok(out)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_bounds() {
        assert_eq!(LexicalOverlapScorer::score("a b", "a b"), 1.0);
        assert_eq!(LexicalOverlapScorer::score("a", "b"), 0.0);
        assert_eq!(LexicalOverlapScorer::score("", ""), 0.0);
        assert!((LexicalOverlapScorer::score("a b", "b c") - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unreachable_service() {
        let s = HttpScorer::new("http://127.0.0.1:9");
        assert!(matches!(
            s.score_pairs("q", &["p"]),
            Err(Error::ScorerUnavailable(_))
        ));
    }
}
