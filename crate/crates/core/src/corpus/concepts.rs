use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{ranked_counts, Vocabulary};
use crate::error::{DccError, Result};

/// Function words never mined as visual concepts.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "in", "on", "at", "to", "with", "by", "for", "from", "is", "are",
    "was", "were", "be", "been", "it", "its", "this", "that", "these", "those", "there", "here", "some",
    "two", "three", "one", "his", "her", "their", "near", "next", "while", "as", "into", "up", "down",
    "photo", "picture", "image",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Concepts recognized by the lexical classifier, each with a fixed row and a
/// paired/novel flag. Novel concepts are the words to be described without
/// paired captions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ConceptsFile", into = "ConceptsFile")]
pub struct ConceptSet {
    words: Vec<String>,
    novel: Vec<bool>,
    rows: HashMap<String, usize>,
}

/// `concepts.json` layout.
#[derive(Serialize, Deserialize)]
struct ConceptsFile {
    concepts: Vec<String>,
    novel: Vec<String>,
}

impl TryFrom<ConceptsFile> for ConceptSet {
    type Error = DccError;

    fn try_from(f: ConceptsFile) -> Result<Self> {
        let novel: BTreeSet<&str> = f.novel.iter().map(String::as_str).collect();
        if let Some(w) = novel.iter().find(|w| !f.concepts.iter().any(|c| c == *w)) {
            return Err(DccError::validation(format!("novel word `{w}` is not a concept")));
        }
        ConceptSet::new(f.concepts.iter().map(|w| (w.clone(), novel.contains(w.as_str()))))
    }
}

impl From<ConceptSet> for ConceptsFile {
    fn from(c: ConceptSet) -> Self {
        let novel = c.novel_words().map(str::to_owned).collect();
        ConceptsFile { concepts: c.words, novel }
    }
}

impl ConceptSet {
    pub fn new(entries: impl IntoIterator<Item = (String, bool)>) -> Result<Self> {
        let mut set = ConceptSet { words: Vec::new(), novel: Vec::new(), rows: HashMap::new() };
        for (w, is_novel) in entries {
            if set.rows.contains_key(&w) {
                return Err(DccError::validation(format!("duplicate concept `{w}`")));
            }
            set.rows.insert(w.clone(), set.words.len());
            set.words.push(w);
            set.novel.push(is_novel);
        }
        if set.words.is_empty() {
            return Err(DccError::validation("concept set is empty"));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row(&self, word: &str) -> Option<usize> {
        self.rows.get(word).copied()
    }

    pub fn word(&self, row: usize) -> &str {
        &self.words[row]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.rows.contains_key(word)
    }

    pub fn is_novel(&self, word: &str) -> bool {
        self.row(word).is_some_and(|r| self.novel[r])
    }

    pub fn novel_words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().zip(&self.novel).filter(|(_, &n)| n).map(|(w, _)| w.as_str())
    }

    pub fn paired_words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().zip(&self.novel).filter(|(_, &n)| !n).map(|(w, _)| w.as_str())
    }

    /// Same concepts with exactly `novel` flagged novel.
    pub fn with_novel(&self, novel: &[String]) -> Result<Self> {
        if let Some(w) = novel.iter().find(|w| !self.contains(w)) {
            return Err(DccError::validation(format!("novel word `{w}` is not a concept")));
        }
        ConceptSet::new(self.words.iter().map(|w| (w.clone(), novel.contains(w))))
    }

    /// Every concept word must be in `vocab`.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        match self.words.iter().find(|w| !vocab.contains(w)) {
            Some(w) => Err(DccError::validation(format!("concept `{w}` is not in the vocabulary"))),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("concept set serializes")
    }
}

/// The `top_k` most frequent non-stopwords, ties alphabetical, followed by
/// `extra` words flagged novel.
pub fn mine_concepts(
    sentences: &[Vec<String>],
    top_k: usize,
    stopwords: &BTreeSet<String>,
    extra: &[String],
) -> Result<ConceptSet> {
    if top_k == 0 {
        return Err(DccError::validation("top_k must be >= 1"));
    }
    let mined: Vec<String> = ranked_counts(sentences)
        .into_iter()
        .map(|(w, _)| w)
        .filter(|w| !stopwords.contains(w) && !extra.contains(w))
        .take(top_k)
        .collect();
    if mined.len() < top_k {
        log::warn!("only {} concept candidates available, wanted {top_k}", mined.len());
    }
    let mut entries: Vec<(String, bool)> = mined.into_iter().map(|w| (w, false)).collect();
    for w in extra {
        if !entries.iter().any(|(e, _)| e == w) {
            entries.push((w.clone(), true));
        }
    }
    ConceptSet::new(entries)
}
