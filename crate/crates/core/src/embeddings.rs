//! CBOW word embeddings and cosine-similarity ranking of transfer sources.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, UNK_ID};
use crate::error::{DccError, Result};
use crate::numerics::ops::{affine_backward, affine_into, softmax_cross_entropy};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig { dim: 32, window: 2, epochs: 5, lr: 0.05, seed: 42 }
    }
}

/// One embedding row per vocabulary word.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    matrix: Tensor<f32>,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, matrix: Tensor<f32>) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.rows() != vocab.len() {
            return Err(DccError::shape(format!(
                "embedding matrix {:?} does not match vocabulary of {} words",
                matrix.shape(),
                vocab.len()
            )));
        }
        if !matrix.is_finite() {
            return Err(DccError::NonFinite("embedding matrix".into()));
        }
        Ok(EmbeddingTable { vocab, matrix })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn matrix(&self) -> &Tensor<f32> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.vocab.id(word).map(|i| self.matrix.row(i))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let va = self.vector(a).ok_or_else(|| DccError::validation(format!("`{a}` has no embedding")))?;
        let vb = self.vector(b).ok_or_else(|| DccError::validation(format!("`{b}` has no embedding")))?;
        cosine_similarity(va, vb)
    }

    /// `embeddings.tsv`: `word<TAB>v1<TAB>...<TAB>vD` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.vocab.words().iter().enumerate() {
            out.push_str(w);
            for v in self.matrix.row(i) {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses `embeddings.tsv`. Reserved tokens missing from the file get zero rows.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut rows: Vec<Vec<f32>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let word = fields.next().unwrap_or_default().to_string();
            let row = fields
                .flat_map(str::split_whitespace)
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| DccError::Parse { line: i + 1, message: e.to_string() })?;
            if row.is_empty() || rows.first().is_some_and(|r| r.len() != row.len()) {
                return Err(DccError::Parse { line: i + 1, message: "inconsistent embedding dimension".into() });
            }
            words.push(word);
            rows.push(row);
        }
        let dim = rows.first().map(|r| r.len()).ok_or_else(|| DccError::validation("empty embedding file"))?;
        let regular: Vec<String> = words.iter().filter(|w| !w.starts_with('<') || !w.ends_with('>')).cloned().collect();
        let vocab = Vocabulary::from_words(regular)?;
        let mut matrix = Tensor::zeros(&[vocab.len(), dim]);
        for (w, row) in words.iter().zip(&rows) {
            if let Some(id) = vocab.id(w) {
                matrix.row_mut(id).copy_from_slice(row);
            }
        }
        EmbeddingTable::new(vocab, matrix)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

/// `u·v / (|u| |v|)`; a zero vector yields 0 with a warning.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(DccError::shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine similarity with a zero vector; returning 0");
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// The `n` candidates most similar to `target`, by descending cosine
/// similarity with ties broken alphabetically.
pub fn nearest_transfer_sources(
    target: &str,
    table: &EmbeddingTable,
    candidates: &BTreeSet<String>,
    n: usize,
) -> Result<Vec<(String, f64)>> {
    if candidates.is_empty() {
        return Err(DccError::validation(format!("no transfer source available for `{target}`")));
    }
    if n == 0 {
        return Err(DccError::validation("number of transfer sources must be >= 1"));
    }
    if candidates.contains(target) {
        return Err(DccError::validation(format!("`{target}` cannot be its own transfer source")));
    }
    let tv = table
        .vector(target)
        .ok_or_else(|| DccError::validation(format!("`{target}` has no embedding")))?;
    let mut scored = candidates
        .iter()
        .map(|c| {
            let cv = table
                .vector(c)
                .ok_or_else(|| DccError::validation(format!("candidate `{c}` has no embedding")))?;
            Ok((c.clone(), cosine_similarity(tv, cv)?))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

/// Losses recorded while training: before the first epoch, then after each.
#[derive(Clone, Debug, PartialEq)]
pub struct CbowReport {
    pub losses: Vec<f64>,
}

struct Cbow {
    input: Tensor<f32>,
    output: Tensor<f32>,
    bias: Vec<f32>,
    window: usize,
}

impl Cbow {
    fn context(&self, ids: &[usize], pos: usize) -> Vec<usize> {
        let lo = pos.saturating_sub(self.window);
        let hi = (pos + self.window + 1).min(ids.len());
        (lo..hi).filter(|&j| j != pos).map(|j| ids[j]).collect()
    }

    fn hidden(&self, ctx: &[usize]) -> Vec<f32> {
        let d = self.input.cols();
        let mut h = vec![0.0f32; d];
        for &c in ctx {
            for (a, &b) in h.iter_mut().zip(self.input.row(c)) {
                *a += b;
            }
        }
        let k = ctx.len() as f32;
        h.iter_mut().for_each(|v| *v /= k);
        h
    }

    fn position_loss(&self, ids: &[usize], pos: usize) -> Option<f64> {
        let ctx = self.context(ids, pos);
        if ctx.is_empty() || ids[pos] == UNK_ID {
            return None;
        }
        let h = self.hidden(&ctx);
        let mut logits = vec![0.0f32; self.output.cols()];
        affine_into(&h, &self.output, Some(&self.bias), &mut logits);
        Some(softmax_cross_entropy(&logits, ids[pos]).expect("center id in range").loss as f64)
    }

    fn mean_loss(&self, corpus: &[Vec<usize>]) -> f64 {
        let (mut total, mut n) = (0.0, 0usize);
        for ids in corpus {
            for pos in 0..ids.len() {
                if let Some(l) = self.position_loss(ids, pos) {
                    total += l;
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    fn step(&mut self, ids: &[usize], pos: usize, lr: f32) {
        let ctx = self.context(ids, pos);
        if ctx.is_empty() || ids[pos] == UNK_ID {
            return;
        }
        let h = self.hidden(&ctx);
        let mut logits = vec![0.0f32; self.output.cols()];
        affine_into(&h, &self.output, Some(&self.bias), &mut logits);
        let lg = softmax_cross_entropy(&logits, ids[pos]).expect("center id in range");
        let mut dh = vec![0.0f32; h.len()];
        let mut dw = Tensor::zeros(self.output.shape());
        let mut db = vec![0.0f32; self.bias.len()];
        affine_backward(&h, &self.output, &lg.grad, Some(&mut dh), Some(&mut dw), Some(&mut db));
        for (w, g) in self.output.data_mut().iter_mut().zip(dw.data()) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&db) {
            *b -= lr * g;
        }
        let k = ctx.len() as f32;
        for &c in &ctx {
            for (e, g) in self.input.row_mut(c).iter_mut().zip(&dh) {
                *e -= lr * g / k;
            }
        }
    }
}

pub fn train_cbow(sentences: &[Vec<String>], vocab: &Vocabulary, cfg: &CbowConfig) -> Result<EmbeddingTable> {
    train_cbow_with_report(sentences, vocab, cfg).map(|(t, _)| t)
}

/// CBOW with a full softmax over the vocabulary, trained one position at a
/// time with SGD. Sentence order is reshuffled each epoch from `cfg.seed`.
pub fn train_cbow_with_report(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    cfg: &CbowConfig,
) -> Result<(EmbeddingTable, CbowReport)> {
    if cfg.dim < 2 {
        return Err(DccError::config("embedding dimension must be >= 2"));
    }
    if cfg.window < 1 {
        return Err(DccError::config("context window must be >= 1"));
    }
    if vocab.regular_words().len() < 2 {
        return Err(DccError::validation("CBOW needs at least two non-reserved vocabulary words"));
    }
    let v = vocab.len();
    let mut rng = Rng::derived(cfg.seed, "cbow");
    let scale = 0.5 / cfg.dim as f64;
    let mut model = Cbow {
        input: rng.uniform_tensor(&[v, cfg.dim], scale),
        output: Tensor::zeros(&[cfg.dim, v]),
        bias: vec![0.0; v],
        window: cfg.window,
    };
    let corpus: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s)).collect();
    let mut losses = vec![model.mean_loss(&corpus)];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            for pos in 0..corpus[i].len() {
                model.step(&corpus[i], pos, cfg.lr);
            }
        }
        losses.push(model.mean_loss(&corpus));
    }
    let table = EmbeddingTable::new(vocab.clone(), model.input)?;
    Ok((table, CbowReport { losses }))
}
