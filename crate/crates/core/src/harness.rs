//! Multi-choice QA evaluation.
//!
//! For every choice the retrieved passages are concatenated with the
//! question and the choice into one reader input; a [`ChoiceScorer`] maps
//! the inputs of one question to raw scores, which are softmax-normalized and
//! argmax-ed into a prediction.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, RetrievalQuery};
use crate::provider::{agent, join_url};
use crate::text::{token_set, tokenize};

/// Placeholder for the reader's special separator token.
pub const DEFAULT_SEPARATOR: &str = " </s> ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaExample {
    pub id: String,
    pub question: String,
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
}

impl McqaExample {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidExample {
            id: self.id.clone(),
            reason,
        };
        if self.question.trim().is_empty() {
            return Err(bad("empty question".into()));
        }
        if self.choices.len() < 2 {
            return Err(bad(format!("{} choices, need at least 2", self.choices.len())));
        }
        if self.choices.iter().any(|c| c.trim().is_empty()) {
            return Err(bad("empty choice".into()));
        }
        if let Some(g) = self.gold {
            if g >= self.choices.len() {
                return Err(bad(format!("gold index {g} out of range")));
            }
        }
        Ok(())
    }
}

/// Reads `{id, question, choices, gold}` records, one per line.
pub fn load_dataset(path: &Path) -> Result<Vec<McqaExample>> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<McqaExample>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: McqaExample = serde_json::from_str(&line)?;
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReaderInput<'a> {
    pub question: &'a str,
    pub choice: &'a str,
    pub passages: Vec<&'a str>,
    pub separator: &'a str,
}

impl ReaderInput<'_> {
    pub fn render(&self) -> String {
        let mut parts = vec![self.question, self.choice];
        parts.extend(&self.passages);
        parts.join(self.separator)
    }
}

/// `question sep choice sep p_1 sep ... sep p_K`.
pub fn assemble_reader_input(
    example: &McqaExample,
    choice_index: usize,
    passages: &[impl AsRef<str>],
    separator: &str,
) -> Result<String> {
    if separator.is_empty() {
        return Err(Error::InvalidParam("separator must be non-empty".into()));
    }
    let choice = example.choices.get(choice_index).ok_or_else(|| Error::InvalidExample {
        id: example.id.clone(),
        reason: format!("choice index {choice_index} out of range"),
    })?;
    Ok(ReaderInput {
        question: &example.question,
        choice,
        passages: passages.iter().map(AsRef::as_ref).collect(),
        separator,
    }
    .render())
}

/// Maps the rendered inputs of one question (one per choice) to raw scores.
pub trait ChoiceScorer: Send + Sync {
    fn score(&self, inputs: &[String]) -> Result<Vec<f64>>;

    fn name(&self) -> String;
}

/// Counts passage tokens that belong to the choice's token set.
///
/// Looks only at the text of each input, never its position.
#[derive(Debug, Clone)]
pub struct LexicalChoiceScorer {
    separator: String,
}

impl LexicalChoiceScorer {
    pub fn new(separator: impl Into<String>) -> Self {
        Self {
            separator: separator.into(),
        }
    }

    pub fn score_one(&self, rendered: &str) -> f64 {
        let mut parts = rendered.split(self.separator.as_str());
        let _question = parts.next();
        let choice = token_set(parts.next().unwrap_or(""));
        parts
            .flat_map(tokenize)
            .filter(|t| choice.contains(t))
            .count() as f64
    }
}

impl ChoiceScorer for LexicalChoiceScorer {
    fn score(&self, inputs: &[String]) -> Result<Vec<f64>> {
        Ok(inputs.iter().map(|s| self.score_one(s)).collect())
    }

    fn name(&self) -> String {
        "stub:lexical".into()
    }
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    inputs: &'a [String],
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Remote reader: `POST <endpoint>/score` with `{inputs}` returning
/// `{scores}`.
pub struct HttpChoiceScorer {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpChoiceScorer {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            agent: agent(),
        }
    }
}

impl ChoiceScorer for HttpChoiceScorer {
    fn score(&self, inputs: &[String]) -> Result<Vec<f64>> {
        let body: ScoreResponse = self
            .agent
            .post(&join_url(&self.base_url, "score"))
            .send_json(ScoreRequest { inputs })
            .map_err(|e| Error::ScorerUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| Error::ScorerUnavailable(format!("bad /score response: {e}")))?;
        if body.scores.len() != inputs.len() {
            return Err(Error::LengthMismatch {
                expected: inputs.len(),
                got: body.scores.len(),
            });
        }
        Ok(body.scores)
    }

    fn name(&self) -> String {
        format!("service:{}", self.base_url)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScore {
    pub choice_index: usize,
    pub raw_score: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub predicted_index: usize,
    pub scores: Vec<ChoiceScore>,
}

impl Prediction {
    pub fn probabilities(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.probability).collect()
    }
}

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let Some(max) = scores.iter().copied().max_by(f64::total_cmp) else {
        return Vec::new();
    };
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// First index holding the maximum.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

pub fn predict(example: &McqaExample, scores: &[f64]) -> Result<Prediction> {
    if scores.len() != example.choices.len() {
        return Err(Error::LengthMismatch {
            expected: example.choices.len(),
            got: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidParam(format!("non-finite choice score {bad}")));
    }
    let probs = softmax(scores);
    let predicted_index = argmax(scores).ok_or(Error::LengthMismatch { expected: 1, got: 0 })?;
    Ok(Prediction {
        predicted_index,
        scores: scores
            .iter()
            .zip(probs)
            .enumerate()
            .map(|(choice_index, (&raw_score, probability))| ChoiceScore {
                choice_index,
                raw_score,
                probability,
            })
            .collect(),
    })
}

/// Source of P_K for a (question, choice) pair.
pub trait PassageSource: Sync {
    /// `(passage_id, text)` in rank order.
    fn passages(&self, query: &RetrievalQuery, all_choices: &[String]) -> Result<Vec<(usize, String)>>;
}

impl PassageSource for Pipeline<'_> {
    fn passages(&self, query: &RetrievalQuery, all_choices: &[String]) -> Result<Vec<(usize, String)>> {
        let corpus = self.retriever.corpus();
        Ok(self
            .run(query, all_choices)?
            .into_iter()
            .map(|s| (s.passage_id, corpus.passages()[s.passage_id].text.clone()))
            .collect())
    }
}

/// Reader inputs without any retrieved knowledge.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPassages;

impl PassageSource for NoPassages {
    fn passages(&self, _query: &RetrievalQuery, _all_choices: &[String]) -> Result<Vec<(usize, String)>> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub predicted: usize,
    pub gold: Option<usize>,
    pub probabilities: Vec<f64>,
    /// Passage ids fed to the reader, one list per choice.
    pub passages_used: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub results: Vec<ExampleResult>,
}

/// Rendered inputs for every choice of `example`, plus the passage ids
/// behind each.
pub fn reader_inputs(
    example: &McqaExample,
    source: &dyn PassageSource,
    separator: &str,
) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let mut inputs = Vec::with_capacity(example.choices.len());
    let mut used = Vec::with_capacity(example.choices.len());
    for (i, choice) in example.choices.iter().enumerate() {
        let query = RetrievalQuery::new(example.question.clone(), choice.clone())?;
        let passages = source.passages(&query, &example.choices)?;
        let texts: Vec<&str> = passages.iter().map(|(_, t)| t.as_str()).collect();
        inputs.push(assemble_reader_input(example, i, &texts, separator)?);
        used.push(passages.iter().map(|(id, _)| *id).collect());
    }
    Ok((inputs, used))
}

/// Predicts one example.
pub fn run_example(
    example: &McqaExample,
    source: &dyn PassageSource,
    scorer: &dyn ChoiceScorer,
    separator: &str,
) -> Result<ExampleResult> {
    example.validate()?;
    let (inputs, passages_used) = reader_inputs(example, source, separator)?;
    let scores = scorer.score(&inputs)?;
    let pred = predict(example, &scores)?;
    Ok(ExampleResult {
        id: example.id.clone(),
        predicted: pred.predicted_index,
        gold: example.gold,
        probabilities: pred.probabilities(),
        passages_used,
    })
}

/// Accuracy over `dataset`. Every example must carry a gold index.
pub fn evaluate(
    dataset: &[McqaExample],
    source: &dyn PassageSource,
    scorer: &dyn ChoiceScorer,
    separator: &str,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidParam("dataset is empty".into()));
    }
    if let Some(ex) = dataset.iter().find(|e| e.gold.is_none()) {
        return Err(Error::MissingGold(ex.id.clone()));
    }
    let results = dataset
        .par_iter()
        .map(|ex| run_example(ex, source, scorer, separator))
        .collect::<Result<Vec<_>>>()?;
    for r in &results {
        log::debug!("{}: predicted {} gold {:?}", r.id, r.predicted, r.gold);
    }
    let correct = results.iter().filter(|r| Some(r.predicted) == r.gold).count();
    Ok(EvalReport {
        accuracy: correct as f64 / results.len() as f64,
        correct,
        total: results.len(),
        results,
    })
}

#[derive(Debug, Serialize)]
struct TrainingRecord<'a> {
    id: &'a str,
    choice_index: usize,
    text: &'a str,
    label: Option<bool>,
}

/// Writes one `{id, choice_index, text, label}` line per choice so an
/// external trainer can consume rendered inputs.
pub fn export_reader_inputs<W: Write>(
    dataset: &[McqaExample],
    source: &dyn PassageSource,
    separator: &str,
    mut out: W,
) -> Result<()> {
    for ex in dataset {
        ex.validate()?;
        let (inputs, _) = reader_inputs(ex, source, separator)?;
        for (i, text) in inputs.iter().enumerate() {
            let rec = TrainingRecord {
                id: &ex.id,
                choice_index: i,
                text,
                label: ex.gold.map(|g| g == i),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
