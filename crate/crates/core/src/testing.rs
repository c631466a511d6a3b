//! Helpers shared by unit tests.

use crate::corpus::{Corpus, Passage, Triplet};

/// A corpus whose passage texts are exactly `texts`; each source triplet is
/// a placeholder `(text, "Text", id)`.
pub(crate) fn corpus_from_texts(texts: &[&str]) -> Corpus {
    let passages = texts
        .iter()
        .enumerate()
        .map(|(id, t)| Passage {
            id,
            text: (*t).to_owned(),
            source: Triplet::new(*t, "Text", id.to_string()),
        })
        .collect();
    Corpus::from_passages(passages).unwrap()
}
