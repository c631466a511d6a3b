//! Knowledge-graph triplet retrieval for multi-choice question answering.
//!
//! The crate covers the whole retrieval side of the system:
//!
//! - [`corpus`]: parse `(head, relation, tail)` triplets and verbalize them
//!   into passages with per-relation templates.
//! - [`sparse`]: Okapi BM25 inverted index.
//! - [`dense`] / [`provider`]: exact inner-product search over passage
//!   embeddings, with pluggable encoders.
//! - [`pipeline`] / [`scorer`]: hybrid retrieval, cross-encoder reranking or
//!   score fusion, CommonsenseQA filtering and top-K selection.
//! - [`harness`]: reader input assembly, softmax/argmax prediction and
//!   accuracy evaluation.

pub mod corpus;
pub mod dense;
pub mod error;
pub mod harness;
pub mod pipeline;
pub mod provider;
pub mod ranking;
pub mod scorer;
pub mod sparse;
pub mod text;

#[cfg(test)]
pub(crate) mod testing;

pub use corpus::{build_corpus, linearize, parse_triplets, Corpus, Passage, RelationTemplateTable, Triplet};
pub use dense::{build_dense_index, DenseIndex, VectorFile};
pub use error::{Error, Result};
pub use harness::{evaluate, predict, ChoiceScorer, McqaExample};
pub use pipeline::{FilterMode, Pipeline, PipelineConfig, RetrievalQuery, Retriever};
pub use provider::{EmbedRole, EmbeddingProvider};
pub use ranking::{Provenance, ScoredPassage};
pub use scorer::RerankScorer;
pub use sparse::{build_sparse_index, Bm25Params, SparseIndex};
pub use text::tokenize;
