//! Okapi BM25 inverted index.
//!
//! IDF follows the `rank_bm25` `BM25Okapi` convention:
//! `idf(t) = ln(N - df + 0.5) - ln(df + 0.5)`, and any term with a negative
//! IDF is raised to `epsilon * mean(idf)` over the whole vocabulary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ranking::{top_n, Provenance, ScoredPassage};
use crate::text::tokenize;

const MAGIC: &[u8; 8] = b"KGTRBM25";
pub const SPARSE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.5,
            b: 0.75,
            epsilon: 0.25,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidParam(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParam(format!("b must be in [0, 1], got {}", self.b)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub passage_id: u32,
    pub term_freq: u32,
}

#[derive(Debug, Clone)]
pub struct SparseIndex {
    params: Bm25Params,
    term_ids: HashMap<String, u32>,
    /// Terms in first-occurrence order; `postings[i]` belongs to `terms[i]`.
    terms: Vec<String>,
    postings: Vec<Vec<Posting>>,
    idf: Vec<f64>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    corpus_digest: String,
}

pub fn build_sparse_index(corpus: &Corpus, params: Bm25Params) -> Result<SparseIndex> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let tokenized: Vec<Vec<String>> = corpus
        .passages()
        .par_iter()
        .map(|p| tokenize(&p.text))
        .collect();

    let mut term_ids: HashMap<String, u32> = HashMap::new();
    let mut terms = Vec::new();
    let mut postings: Vec<Vec<Posting>> = Vec::new();
    let mut doc_lens = Vec::with_capacity(tokenized.len());

    for (doc, tokens) in tokenized.into_iter().enumerate() {
        doc_lens.push(len_u32(tokens.len())?);
        let mut counts: Vec<(u32, u32)> = Vec::new();
        for tok in tokens {
            let next = terms.len() as u32;
            let id = *term_ids.entry(tok).or_insert_with_key(|k| {
                terms.push(k.clone());
                postings.push(Vec::new());
                next
            });
            match counts.iter_mut().find(|(t, _)| *t == id) {
                Some((_, c)) => *c += 1,
                None => counts.push((id, 1)),
            }
        }
        for (term, tf) in counts {
            postings[term as usize].push(Posting {
                passage_id: len_u32(doc)?,
                term_freq: tf,
            });
        }
    }

    Ok(SparseIndex::assemble(
        params,
        term_ids,
        terms,
        postings,
        doc_lens,
        corpus.digest().to_owned(),
    ))
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidParam(format!("{n} exceeds u32 range")))
}

impl SparseIndex {
    fn assemble(
        params: Bm25Params,
        term_ids: HashMap<String, u32>,
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
        doc_lens: Vec<u32>,
        corpus_digest: String,
    ) -> Self {
        let n_docs = doc_lens.len() as f64;
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        let avg_len = total as f64 / n_docs;

        let mut idf: Vec<f64> = postings
            .iter()
            .map(|p| {
                let df = p.len() as f64;
                (n_docs - df + 0.5).ln() - (df + 0.5).ln()
            })
            .collect();
        if !idf.is_empty() {
            let mean = idf.iter().sum::<f64>() / idf.len() as f64;
            let floor = params.epsilon * mean;
            for v in idf.iter_mut().filter(|v| **v < 0.0) {
                *v = floor;
            }
        }

        Self {
            params,
            term_ids,
            terms,
            postings,
            idf,
            doc_lens,
            avg_len,
            corpus_digest,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, id: usize) -> Option<u32> {
        self.doc_lens.get(id).copied()
    }

    pub fn vocab_len(&self) -> usize {
        self.terms.len()
    }

    pub fn corpus_digest(&self) -> &str {
        &self.corpus_digest
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_ids.get(term).map(|&i| self.idf[i as usize])
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.term_ids
            .get(term)
            .map(|&i| self.postings[i as usize].as_slice())
    }

    /// BM25 score of every passage for `query_text` (index = passage id).
    /// Repeated query tokens contribute once per occurrence.
    pub fn score_all(&self, query_text: &str) -> Vec<f64> {
        let mut scores = vec![0.0f64; self.num_docs()];
        let Bm25Params { k1, b, .. } = self.params;
        for tok in tokenize(query_text) {
            let Some(&term) = self.term_ids.get(&tok) else {
                continue;
            };
            let idf = self.idf[term as usize];
            for p in &self.postings[term as usize] {
                let tf = f64::from(p.term_freq);
                let dl = f64::from(self.doc_lens[p.passage_id as usize]);
                let norm = tf + k1 * (1.0 - b + b * dl / self.avg_len);
                scores[p.passage_id as usize] += idf * (tf * (k1 + 1.0) / norm);
            }
        }
        scores
    }

    /// Top `n` passages by BM25 score; zero-score passages are eligible.
    pub fn search(&self, query_text: &str, n: usize) -> Vec<ScoredPassage> {
        top_n(&self.score_all(query_text), n, Provenance::Sparse)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(SPARSE_FORMAT_VERSION)?;
        w.write_f64::<LittleEndian>(self.params.k1)?;
        w.write_f64::<LittleEndian>(self.params.b)?;
        w.write_f64::<LittleEndian>(self.params.epsilon)?;
        write_str(&mut w, &self.corpus_digest)?;
        w.write_u64::<LittleEndian>(self.doc_lens.len() as u64)?;
        for &l in &self.doc_lens {
            w.write_u32::<LittleEndian>(l)?;
        }
        w.write_u64::<LittleEndian>(self.terms.len() as u64)?;
        for (term, plist) in self.terms.iter().zip(&self.postings) {
            write_str(&mut w, term)?;
            w.write_u32::<LittleEndian>(plist.len() as u32)?;
            for p in plist {
                w.write_u32::<LittleEndian>(p.passage_id)?;
                w.write_u32::<LittleEndian>(p.term_freq)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a sparse index file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != SPARSE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported sparse index version {version}"
            )));
        }
        let params = Bm25Params {
            k1: r.read_f64::<LittleEndian>()?,
            b: r.read_f64::<LittleEndian>()?,
            epsilon: r.read_f64::<LittleEndian>()?,
        };
        params.validate()?;
        let corpus_digest = read_str(&mut r)?;
        let n_docs = r.read_u64::<LittleEndian>()? as usize;
        if n_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut doc_lens = Vec::with_capacity(n_docs.min(1 << 24));
        for _ in 0..n_docs {
            doc_lens.push(r.read_u32::<LittleEndian>()?);
        }
        let n_terms = r.read_u64::<LittleEndian>()? as usize;
        let mut terms = Vec::with_capacity(n_terms.min(1 << 24));
        let mut postings = Vec::with_capacity(n_terms.min(1 << 24));
        let mut term_ids = HashMap::with_capacity(n_terms.min(1 << 24));
        for i in 0..n_terms {
            let term = read_str(&mut r)?;
            let count = r.read_u32::<LittleEndian>()? as usize;
            let mut plist = Vec::with_capacity(count.min(n_docs));
            for _ in 0..count {
                let passage_id = r.read_u32::<LittleEndian>()?;
                let term_freq = r.read_u32::<LittleEndian>()?;
                if passage_id as usize >= n_docs {
                    return Err(Error::Format(format!(
                        "posting for `{term}` references passage {passage_id} of {n_docs}"
                    )));
                }
                plist.push(Posting {
                    passage_id,
                    term_freq,
                });
            }
            if term_ids.insert(term.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate term `{term}`")));
            }
            terms.push(term);
            postings.push(plist);
        }
        Ok(Self::assemble(
            params,
            term_ids,
            terms,
            postings,
            doc_lens,
            corpus_digest,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(len_u32(s.len())?)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = Vec::with_capacity(len.min(1 << 20));
    r.by_ref().take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Format("truncated string".into()));
    }
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, RelationTemplateTable};

    fn corpus_of(texts: &[&str]) -> Corpus {
        crate::testing::corpus_from_texts(texts)
    }

    #[test]
    fn bookkeeping() {
        let corpus = corpus_of(&["a b", "a b c d", "e"]);
        let idx = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        assert_eq!(idx.num_docs(), 3);
        assert!((idx.avg_len() - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn postings_count_term_frequency() {
        let corpus = corpus_of(&["a a b"]);
        let idx = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        assert_eq!(idx.postings("a").unwrap(), &[Posting { passage_id: 0, term_freq: 2 }]);
        assert_eq!(idx.postings("b").unwrap(), &[Posting { passage_id: 0, term_freq: 1 }]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let corpus = build_corpus(&[], &RelationTemplateTable::conceptnet()).unwrap();
        assert!(matches!(
            build_sparse_index(&corpus, Bm25Params::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn bad_params_rejected() {
        let corpus = corpus_of(&["a"]);
        for p in [
            Bm25Params { k1: 0.0, ..Default::default() },
            Bm25Params { b: 1.5, ..Default::default() },
            Bm25Params { epsilon: -0.1, ..Default::default() },
        ] {
            assert!(build_sparse_index(&corpus, p).is_err());
        }
    }

    #[test]
    fn no_overlap_returns_zero_scores_by_id() {
        let corpus = corpus_of(&["cat chases mouse", "dog chases ball", "mouse eats cheese"]);
        let idx = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        let hits = idx.search("zebra", 2);
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.score == 0.0 && h.provenance == Provenance::Sparse));
        assert_eq!(hits[0].passage_id, 0);
        assert_eq!(hits[1].passage_id, 1);
        assert_eq!(idx.search("zebra", 10).len(), 3);
    }

    #[test]
    fn persistence_round_trip_and_version_check() {
        let corpus = corpus_of(&["cat chases mouse", "dog chases ball", "mouse eats cheese"]);
        let idx = build_sparse_index(&corpus, Bm25Params::default()).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = SparseIndex::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.score_all("mouse cheese"), idx.score_all("mouse cheese"));
        assert_eq!(back.corpus_digest(), corpus.digest());

        let mut bad = buf.clone();
        bad[8] = 99;
        assert!(matches!(SparseIndex::read_from(bad.as_slice()), Err(Error::Format(_))));
        assert!(SparseIndex::read_from(&b"NOTMAGIC"[..]).is_err());
    }
}
