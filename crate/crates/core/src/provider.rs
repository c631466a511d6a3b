//! Embedding providers.
//!
//! A provider turns texts into fixed-dimension vectors. The `role` argument
//! lets query and passage texts go through different encoders.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::dense::VectorFile;
use crate::error::{Error, Result};
use crate::text::tokenize;

/// Texts sent per request to the model service.
pub const SERVICE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedRole {
    Query,
    Passage,
}

impl fmt::Display for EmbedRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedRole::Query => "query",
            EmbedRole::Passage => "passage",
        })
    }
}

impl FromStr for EmbedRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query" => Ok(EmbedRole::Query),
            "passage" => Ok(EmbedRole::Passage),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, all of the same dimension.
    fn embed(&self, texts: &[&str], role: EmbedRole) -> Result<Vec<Vec<f32>>>;

    /// Identifies the encoder; stored in dense indexes and compared at query
    /// time.
    fn fingerprint(&self) -> String;
}

/// Signed feature hashing of lowercase tokens, L2-normalized.
///
/// Needs no model; inner products approximate token-overlap cosine, so it
/// serves as a deterministic stand-in encoder for tests and toy runs.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
}

impl HashingProvider {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam("hashing dimension must be > 0".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f64; self.dim];
        for tok in tokenize(text) {
            let h = Sha256::digest(tok.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[(bucket % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v.into_iter().map(|x| x as f32).collect()
    }
}

impl EmbeddingProvider for HashingProvider {
    fn embed(&self, texts: &[&str], _role: EmbedRole) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn fingerprint(&self) -> String {
        format!("hashing-v1:dim={}", self.dim)
    }
}

/// Looks vectors up by exact text, per role.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedProvider {
    dim: usize,
    tables: HashMap<EmbedRole, HashMap<String, Vec<f32>>>,
}

impl PrecomputedProvider {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam("vector dimension must be > 0".into()));
        }
        Ok(Self {
            dim,
            tables: HashMap::new(),
        })
    }

    /// Passage vectors for `corpus`, row i belonging to passage i.
    pub fn for_corpus(corpus: &Corpus, vectors: &VectorFile) -> Result<Self> {
        let mut provider = Self::new(vectors.dim())?;
        provider.insert_all(EmbedRole::Passage, corpus.texts(), vectors)?;
        Ok(provider)
    }

    /// Registers `texts[i] -> vectors.row(i)` for `role`.
    pub fn insert_all<'a, I>(&mut self, role: EmbedRole, texts: I, vectors: &VectorFile) -> Result<()>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if vectors.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vectors.dim(),
            });
        }
        let texts: Vec<&str> = texts.into_iter().collect();
        if texts.len() != vectors.count() {
            return Err(Error::LengthMismatch {
                expected: texts.len(),
                got: vectors.count(),
            });
        }
        let table = self.tables.entry(role).or_default();
        for (i, text) in texts.into_iter().enumerate() {
            table.insert(text.to_owned(), vectors.row(i).to_vec());
        }
        Ok(())
    }

    pub fn insert(&mut self, role: EmbedRole, text: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.tables.entry(role).or_default().insert(text.to_owned(), vector);
        Ok(())
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn embed(&self, texts: &[&str], role: EmbedRole) -> Result<Vec<Vec<f32>>> {
        let table = self.tables.get(&role);
        texts
            .iter()
            .map(|t| {
                table
                    .and_then(|m| m.get(*t))
                    .cloned()
                    .ok_or_else(|| Error::MissingEmbedding(format!("{role}: {t}")))
            })
            .collect()
    }

    fn fingerprint(&self) -> String {
        format!("precomputed:dim={}", self.dim)
    }
}

#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub texts: &'a [&'a str],
    pub role: EmbedRole,
}

#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

/// `GET /info` body of the model service.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ServiceInfo {
    #[serde(default)]
    pub embed_model: Option<String>,
    #[serde(default)]
    pub rerank_model: Option<String>,
    #[serde(default)]
    pub dim: Option<usize>,
}

pub(crate) fn agent() -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(10))
        .timeout(Duration::from_secs(600))
        .build()
}

pub(crate) fn join_url(base: &str, route: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), route.trim_start_matches('/'))
}

pub(crate) fn fetch_info(agent: &ureq::Agent, base: &str) -> Option<ServiceInfo> {
    agent
        .get(&join_url(base, "info"))
        .call()
        .ok()?
        .into_json()
        .ok()
}

/// Client for the model service's `POST /embed` route.
pub struct HttpProvider {
    base_url: String,
    agent: ureq::Agent,
    fingerprint: String,
}

impl HttpProvider {
    /// Connects lazily; `GET /info` is queried once to name the encoder.
    pub fn new(base_url: impl Into<String>) -> Self {
        let base_url = base_url.into();
        let agent = agent();
        let fingerprint = match fetch_info(&agent, &base_url).and_then(|i| i.embed_model) {
            Some(model) => format!("service:{model}"),
            None => format!("service:{base_url}"),
        };
        Self {
            base_url,
            agent,
            fingerprint,
        }
    }

    fn embed_chunk(&self, texts: &[&str], role: EmbedRole) -> Result<Vec<Vec<f32>>> {
        let resp = self
            .agent
            .post(&join_url(&self.base_url, "embed"))
            .send_json(EmbedRequest { texts, role })
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        let body: EmbedResponse = resp
            .into_json()
            .map_err(|e| Error::ProviderUnavailable(format!("bad /embed response: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(Error::LengthMismatch {
                expected: texts.len(),
                got: body.vectors.len(),
            });
        }
        if let Some(v) = body.vectors.iter().find(|v| v.len() != body.dim) {
            return Err(Error::DimensionMismatch {
                expected: body.dim,
                got: v.len(),
            });
        }
        Ok(body.vectors)
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, texts: &[&str], role: EmbedRole) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(SERVICE_CHUNK) {
            out.extend(self.embed_chunk(chunk, role)?);
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let p = HashingProvider::new(32).unwrap();
        let a = p.embed_one("Hair brush is at location of hair");
        let b = p.embed_one("hair BRUSH is at location of hair!");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(p.embed_one("").iter().all(|x| *x == 0.0));
        assert!(HashingProvider::new(0).is_err());
    }

    #[test]
    fn precomputed_lookup_by_role() {
        let mut p = PrecomputedProvider::new(2).unwrap();
        p.insert(EmbedRole::Query, "q", vec![1.0, 0.0]).unwrap();
        assert_eq!(p.embed(&["q"], EmbedRole::Query).unwrap(), vec![vec![1.0, 0.0]]);
        assert!(matches!(
            p.embed(&["q"], EmbedRole::Passage),
            Err(Error::MissingEmbedding(_))
        ));
        assert!(p.insert(EmbedRole::Query, "x", vec![1.0]).is_err());
    }

    #[test]
    fn unreachable_service_is_unavailable() {
        let p = HttpProvider::new("http://127.0.0.1:9");
        assert!(matches!(
            p.embed(&["x"], EmbedRole::Query),
            Err(Error::ProviderUnavailable(_))
        ));
    }
}
