//! Knowledge-graph triplets and the passage corpus built from them.
//!
//! Every triplet `(head, relation, tail)` is turned into one sentence by
//! substituting the relation's template phrase between the two entities.
//! The corpus is persisted as JSON lines, one passage per line, with a small
//! metadata sidecar next to it (`<corpus>.meta.json`).

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// ConceptNet relation names and the phrases used to verbalize them.
const CONCEPTNET_TEMPLATES: [(&str, &str); 31] = [
    ("Antonym", "is the antonym of"),
    ("AtLocation", "is at location of"),
    ("CapableOf", "is capable of"),
    ("Causes", "causes"),
    ("CreatedBy", "is created by"),
    ("IsA", "is a kind of"),
    ("Desires", "desires"),
    ("HasSubevent", "has subevent"),
    ("PartOf", "is part of"),
    ("HasContext", "has context"),
    ("HasProperty", "has property"),
    ("MadeOf", "is made of"),
    ("NotCapableOf", "is not capable of"),
    ("NotDesires", "does not desire"),
    ("ReceivesAction", "is"),
    ("RelatedTo", "is related to"),
    ("UsedFor", "is used for"),
    ("LocatedNear", "is located near"),
    ("CausesDesire", "causes the desire of"),
    ("MotivatedByGoal", "is motivated by the goal of"),
    ("DistinctFrom", "is distinct from"),
    ("HasFirstSubevent", "has the first subevent"),
    ("HasLastSubevent", "has the last subevent"),
    ("HasPrerequisite", "has the prerequisite of"),
    ("Entails", "entails"),
    ("MannerOf", "a manner of"),
    ("InstanceOf", "an instance of"),
    ("DefinedAs", "is defined as"),
    ("HasA", "has a"),
    ("SimilarTo", "is similar to"),
    ("Synonym", "is the synonym of"),
];

/// Relation name whose passages the CommonsenseQA filter drops.
pub const RELATED_TO: &str = "RelatedTo";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triplet {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }

    /// Replaces `_` with a space in both entities (ConceptNet dumps use
    /// underscores inside multi-word concepts).
    pub fn normalize_underscores(&mut self) {
        self.head = self.head.replace('_', " ");
        self.tail = self.tail.replace('_', " ");
    }
}

/// Maps relation names to template phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplateTable {
    templates: BTreeMap<String, String>,
}

impl RelationTemplateTable {
    /// The 31-relation ConceptNet table.
    pub fn conceptnet() -> Self {
        let templates = CONCEPTNET_TEMPLATES
            .iter()
            .map(|(name, phrase)| ((*name).to_owned(), (*phrase).to_owned()))
            .collect();
        Self { templates }
    }

    /// Builds a custom table. Duplicate names, empty names or empty phrases
    /// are rejected.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut templates = BTreeMap::new();
        for (name, phrase) in pairs {
            let name = name.into();
            let phrase = phrase.into();
            if name.trim().is_empty() || phrase.trim().is_empty() {
                return Err(Error::InvalidParam(format!(
                    "empty relation name or template for `{name}`"
                )));
            }
            if templates.insert(name.clone(), phrase).is_some() {
                return Err(Error::InvalidParam(format!("duplicate relation `{name}`")));
            }
        }
        Ok(Self { templates })
    }

    pub fn get(&self, relation: &str) -> Option<&str> {
        self.templates.get(relation).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.templates.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl Default for RelationTemplateTable {
    fn default() -> Self {
        Self::conceptnet()
    }
}

/// Reads tab-separated `head relation tail` lines.
///
/// Blank lines and lines starting with `#` are skipped. The first line that
/// does not have exactly three non-empty fields aborts parsing with its
/// 1-based line number.
pub fn parse_triplets<R: BufRead>(reader: R) -> Result<Vec<Triplet>> {
    let mut triplets = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let line = line.trim_end_matches(['\r', '\n']);
        let leading = line.trim_start();
        if leading.is_empty() || leading.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        match fields.as_slice() {
            [h, r, t] if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                triplets.push(Triplet::new(*h, *r, *t));
            }
            _ => return Err(Error::MalformedLine(line_no)),
        }
    }
    Ok(triplets)
}

/// Verbalizes a triplet as `<head> <template> <tail>`.
pub fn linearize(triplet: &Triplet, table: &RelationTemplateTable) -> Result<String> {
    let phrase = table
        .get(&triplet.relation)
        .ok_or_else(|| Error::UnknownRelation(triplet.relation.clone()))?;
    let mut text =
        String::with_capacity(triplet.head.len() + phrase.len() + triplet.tail.len() + 2);
    text.push_str(&triplet.head);
    text.push(' ');
    text.push_str(phrase);
    text.push(' ');
    text.push_str(&triplet.tail);
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: usize,
    pub text: String,
    pub source: Triplet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub format_version: u32,
    /// SHA-256 of the triplet source the corpus was built from.
    pub source_digest: String,
    /// SHA-256 of the serialized passage records.
    pub corpus_digest: String,
    pub passage_count: usize,
    pub created_unix: u64,
}

#[derive(Serialize, Deserialize)]
struct PassageRecord<'a> {
    id: usize,
    #[serde(borrow)]
    text: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    head: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    relation: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    tail: std::borrow::Cow<'a, str>,
}

impl<'a> From<&'a Passage> for PassageRecord<'a> {
    fn from(p: &'a Passage) -> Self {
        Self {
            id: p.id,
            text: p.text.as_str().into(),
            head: p.source.head.as_str().into(),
            relation: p.source.relation.as_str().into(),
            tail: p.source.tail.as_str().into(),
        }
    }
}

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// An immutable, densely numbered list of passages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    passages: Vec<Passage>,
    meta: CorpusMeta,
}

/// Deduplicates exact-duplicate triplets (keeping the first) and linearizes
/// the survivors. Ids follow input order.
pub fn build_corpus(triplets: &[Triplet], table: &RelationTemplateTable) -> Result<Corpus> {
    let mut seen = HashSet::with_capacity(triplets.len());
    let unique: Vec<&Triplet> = triplets.iter().filter(|t| seen.insert(*t)).collect();

    let texts = unique
        .par_iter()
        .map(|t| linearize(t, table))
        .collect::<Result<Vec<_>>>()?;

    let passages = unique
        .into_iter()
        .zip(texts)
        .enumerate()
        .map(|(id, (source, text))| Passage {
            id,
            text,
            source: source.clone(),
        })
        .collect();

    let mut hasher = Sha256::new();
    for t in triplets {
        hasher.update(format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
    }
    Ok(Corpus::with_meta(passages, hex::encode(hasher.finalize())))
}

impl Corpus {
    /// Wraps already-linearized passages. Ids must equal list positions and
    /// source triplets must be unique.
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(passages.len());
        for (pos, p) in passages.iter().enumerate() {
            if p.id != pos {
                return Err(Error::Format(format!("passage at position {pos} has id {}", p.id)));
            }
            if !seen.insert(&p.source) {
                return Err(Error::Format(format!("passage {pos} repeats a source triplet")));
            }
        }
        Ok(Self::with_meta(passages, String::new()))
    }

    fn with_meta(passages: Vec<Passage>, source_digest: String) -> Self {
        let corpus_digest = digest_passages(&passages);
        let meta = CorpusMeta {
            format_version: CORPUS_FORMAT_VERSION,
            source_digest,
            corpus_digest,
            passage_count: passages.len(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        Self { passages, meta }
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, id: usize) -> Option<&Passage> {
        self.passages.get(id)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn meta(&self) -> &CorpusMeta {
        &self.meta
    }

    /// Content digest of the passage records; indexes record it so that a
    /// corpus/index mismatch can be detected at load time.
    pub fn digest(&self) -> &str {
        &self.meta.corpus_digest
    }

    pub fn set_source_digest(&mut self, digest: impl Into<String>) {
        self.meta.source_digest = digest.into();
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.passages.iter().map(|p| p.text.as_str())
    }

    /// Path of the metadata sidecar for a corpus file.
    pub fn meta_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    }

    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.passages {
            serde_json::to_writer(&mut out, &PassageRecord::from(p))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Writes the passage file and its sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_records(&mut out)?;
        out.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        fs::write(Self::meta_path(path), meta + "\n")?;
        Ok(())
    }

    /// Loads a corpus file, validating id density. The sidecar is optional;
    /// when present its digest and count must agree with the records.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut passages = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PassageRecord<'_> = serde_json::from_str(&line)?;
            if rec.id != passages.len() {
                return Err(Error::Format(format!(
                    "corpus line {}: expected id {}, found {}",
                    idx + 1,
                    passages.len(),
                    rec.id
                )));
            }
            passages.push(Passage {
                id: rec.id,
                text: rec.text.into_owned(),
                source: Triplet::new(rec.head, rec.relation, rec.tail),
            });
        }

        let mut corpus = Self::with_meta(passages, String::new());
        let meta_path = Self::meta_path(path);
        if meta_path.exists() {
            let meta: CorpusMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
            if meta.corpus_digest != corpus.meta.corpus_digest {
                return Err(Error::DigestMismatch {
                    what: "corpus metadata",
                    expected: meta.corpus_digest,
                    actual: corpus.meta.corpus_digest,
                });
            }
            if meta.passage_count != corpus.len() {
                return Err(Error::Format(format!(
                    "metadata lists {} passages, file has {}",
                    meta.passage_count,
                    corpus.len()
                )));
            }
            corpus.meta = meta;
        }
        Ok(corpus)
    }
}

fn digest_passages(passages: &[Passage]) -> String {
    let mut hasher = Sha256::new();
    for p in passages {
        // serializing a record into a Vec cannot fail
        let line = serde_json::to_vec(&PassageRecord::from(p)).expect("passage record serializes");
        hasher.update(&line);
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
