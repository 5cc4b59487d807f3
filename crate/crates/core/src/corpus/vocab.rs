use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{DccError, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;
const RESERVED: [&str; 3] = [BOS, EOS, UNK];

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| {
            tok.chars()
                .filter(|c| !c.is_ascii_punctuation() && !c.is_ascii_control())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Word/index map with `<bos>`, `<eos>`, `<unk>` fixed at 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    words: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = DccError;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        if repr.words.len() < RESERVED.len() || repr.words[..3] != RESERVED {
            return Err(DccError::validation("vocabulary must start with <bos>, <eos>, <unk>"));
        }
        Vocabulary::from_words(repr.words[3..].iter().cloned())
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { words: v.words }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved words in the given order.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Vocabulary { words: Vec::new(), index: HashMap::new() };
        for w in RESERVED.iter().map(|s| s.to_string()).chain(words) {
            if v.index.contains_key(&w) {
                return Err(DccError::validation(format!("duplicate vocabulary word `{w}`")));
            }
            v.index.insert(w.clone(), v.words.len());
            v.words.push(w);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Words other than the three reserved tokens.
    pub fn regular_words(&self) -> &[String] {
        &self.words[3..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// `<bos> tokens <eos>` as ids.
    pub fn encode_sentence(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS_ID);
        ids.extend(tokens.iter().map(|t| self.id_or_unk(t)));
        ids.push(EOS_ID);
        ids
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serializes")
    }
}

/// Token counts across sentences, ordered by (count desc, word asc).
pub(crate) fn ranked_counts<'a>(sentences: impl IntoIterator<Item = &'a Vec<String>>) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sentences {
        for t in s {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(w, c)| (w.to_string(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Reserved tokens plus every word seen at least `min_count` times.
pub fn build_vocab(sentences: &[Vec<String>], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let words = ranked_counts(sentences)
        .into_iter()
        .filter(|(w, c)| *c >= min_count && !RESERVED.contains(&w.as_str()))
        .map(|(w, _)| w);
    Vocabulary::from_words(words).expect("counted words are unique")
}
