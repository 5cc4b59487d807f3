//! Novel-word F1 and corpus BLEU-1.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caption::CaptionModelParams;
use crate::corpus::PairedExample;
use crate::error::{DccError, Result};

/// Confusion counts and scores for one word. A generated caption is
/// positive if it mentions the word; an example is positive in the
/// references if any of its references mention it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordF1 {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl WordF1 {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        WordF1 { tp, fp, fn_, precision, recall, f1 }
    }
}

fn mentions(tokens: &[String], word: &str) -> bool {
    tokens.iter().any(|t| t == word)
}

pub fn f1_novel_word(word: &str, generated: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<WordF1> {
    if generated.len() != references.len() {
        return Err(DccError::validation(format!(
            "{} generated captions but {} reference sets",
            generated.len(),
            references.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (gen, refs) in generated.iter().zip(references) {
        let g = mentions(gen, word);
        let r = refs.iter().any(|r| mentions(r, word));
        match (g, r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(WordF1::from_counts(tp, fp, fn_))
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU-1: clipped unigram precision times the brevity penalty, with
/// the closest reference length per hypothesis (shorter wins ties).
pub fn bleu1(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(DccError::validation("BLEU needs at least one hypothesis"));
    }
    if hypotheses.len() != references.len() {
        return Err(DccError::validation(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let (mut matched, mut c, mut r) = (0usize, 0usize, 0usize);
    for (i, (hyp, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(DccError::validation(format!("example {i} has no references")));
        }
        let mut max_ref: HashMap<&str, usize> = HashMap::new();
        for rc in refs.iter().map(|r| counts(r)) {
            for (w, n) in rc {
                let e = max_ref.entry(w).or_insert(0);
                *e = (*e).max(n);
            }
        }
        for (w, n) in counts(hyp) {
            matched += n.min(max_ref.get(w).copied().unwrap_or(0));
        }
        c += hyp.len();
        r += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&len| (len.abs_diff(hyp.len()), len))
            .expect("non-empty");
    }
    if c == 0 {
        return Ok(0.0);
    }
    let precision = matched as f64 / c as f64;
    let bp = (1.0 - r as f64 / c as f64).min(0.0).exp();
    Ok(precision * bp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_word: BTreeMap<String, WordF1>,
    pub avg_f1: f64,
    pub bleu1: f64,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Scores already-generated captions. The average is the unweighted mean
/// of the per-word F1 values.
pub fn evaluate_captions(
    generated: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    novel: &[String],
    config: serde_json::Value,
) -> Result<EvalReport> {
    if novel.is_empty() {
        return Err(DccError::validation("evaluation needs at least one novel word"));
    }
    let mut per_word = BTreeMap::new();
    for w in novel {
        per_word.insert(w.clone(), f1_novel_word(w, generated, references)?);
    }
    let avg_f1 = per_word.values().map(|s| s.f1).sum::<f64>() / per_word.len() as f64;
    Ok(EvalReport { per_word, avg_f1, bleu1: bleu1(generated, references)?, config })
}

/// Greedy captions for every test example.
pub fn generate_all(model: &CaptionModelParams, test: &[PairedExample], max_len: usize) -> Result<Vec<Vec<String>>> {
    test.iter()
        .map(|ex| {
            model.generate_caption(&ex.visual, max_len).map_err(|e| match e {
                DccError::Shape(m) => DccError::Shape(format!("example `{}`: {m}", ex.id)),
                DccError::Validation(m) => DccError::Validation(format!("example `{}`: {m}", ex.id)),
                other => other,
            })
        })
        .collect()
}

/// Generates captions for the test set and scores them.
pub fn evaluate_run(
    model: &CaptionModelParams,
    test: &[PairedExample],
    novel: &[String],
    max_len: usize,
    config: serde_json::Value,
) -> Result<(EvalReport, Vec<Vec<String>>)> {
    for w in novel {
        if !model.vocab().contains(w) {
            return Err(DccError::validation(format!("novel word `{w}` is not in the model vocabulary")));
        }
    }
    let generated = generate_all(model, test, max_len)?;
    let references: Vec<Vec<Vec<String>>> = test.iter().map(|ex| ex.captions.clone()).collect();
    let report = evaluate_captions(&generated, &references, novel, config)?;
    Ok((report, generated))
}
