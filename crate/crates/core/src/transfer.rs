//! Weight transfer from paired source words to novel target words.
//!
//! Direct transfer copies the source word's output columns and re-couples
//! the classifier row; delta transfer instead moves the target's language
//! weights by the change caption training made to its sources.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caption::{CaptionModelParams, Regime, CAP_B, CAP_B_LANG, CAP_WI, CAP_WL, CAP_WL_LANG};
use crate::corpus::{ConceptSet, Vocabulary};
use crate::embeddings::{nearest_transfer_sources, EmbeddingTable};
use crate::error::{DccError, Result};
use crate::numerics::Tensor;

/// Transfer methods share their names with the caption training regimes.
pub type TransferMethod = Regime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSource {
    pub word: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferGroup {
    pub target: String,
    pub sources: Vec<RankedSource>,
}

/// The on-disk plan: per target word, its ranked source words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub method: TransferMethod,
    pub n: usize,
    pub pairs: Vec<TransferGroup>,
}

/// One source/target pair resolved to vocabulary columns and concept rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferPair {
    pub source: String,
    pub target: String,
    pub v_s: usize,
    pub v_a: usize,
    pub r_s: usize,
    pub r_a: usize,
    pub similarity: f64,
}

impl TransferPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Checks the plan against a model's vocabulary and concepts and returns
    /// one ranked pair list per target.
    pub fn resolve(&self, vocab: &Vocabulary, concepts: &ConceptSet) -> Result<Vec<Vec<TransferPair>>> {
        if self.n == 0 {
            return Err(DccError::validation("transfer plan n must be >= 1"));
        }
        if self.method == Regime::Direct && self.n > 1 {
            return Err(DccError::validation(format!(
                "direct transfer supports n = 1 only (plan has n = {})",
                self.n
            )));
        }
        let targets: BTreeSet<&str> = self.pairs.iter().map(|g| g.target.as_str()).collect();
        if targets.len() != self.pairs.len() {
            return Err(DccError::validation("transfer plan lists a target more than once"));
        }
        let lookup = |word: &str, role: &str| -> Result<(usize, usize)> {
            let v = vocab
                .id(word)
                .ok_or_else(|| DccError::validation(format!("{role} `{word}` is not in the vocabulary")))?;
            let r = concepts
                .row(word)
                .ok_or_else(|| DccError::validation(format!("{role} `{word}` is not a concept")))?;
            Ok((v, r))
        };
        let mut out = Vec::with_capacity(self.pairs.len());
        for group in &self.pairs {
            if !concepts.is_novel(&group.target) {
                return Err(DccError::validation(format!("target `{}` is not flagged novel", group.target)));
            }
            if group.sources.is_empty() || group.sources.len() > self.n {
                return Err(DccError::validation(format!(
                    "target `{}` has {} sources; expected between 1 and {}",
                    group.target,
                    group.sources.len(),
                    self.n
                )));
            }
            let (v_a, r_a) = lookup(&group.target, "target")?;
            let mut pairs = Vec::with_capacity(group.sources.len());
            for src in &group.sources {
                if targets.contains(src.word.as_str()) || concepts.is_novel(&src.word) {
                    return Err(DccError::validation(format!(
                        "source `{}` is itself a novel word; chained transfer is not supported",
                        src.word
                    )));
                }
                let (v_s, r_s) = lookup(&src.word, "source")?;
                pairs.push(TransferPair {
                    source: src.word.clone(),
                    target: group.target.clone(),
                    v_s,
                    v_a,
                    r_s,
                    r_a,
                    similarity: src.similarity,
                });
            }
            out.push(pairs);
        }
        Ok(out)
    }
}

/// Ranks transfer sources for each novel word. Candidates are the
/// non-novel concepts that occur in paired captions.
pub fn build_transfer_plan(
    novel: &[String],
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    concepts: &ConceptSet,
    paired_words: &BTreeSet<String>,
    method: TransferMethod,
    n: usize,
) -> Result<TransferPlan> {
    if method == Regime::Direct && n != 1 {
        return Err(DccError::validation(format!("direct transfer supports n = 1 only (got {n})")));
    }
    let mut candidates = BTreeSet::new();
    for word in concepts.paired_words() {
        if !paired_words.contains(word) || !vocab.contains(word) {
            continue;
        }
        if table.vocab().id(word).is_none() {
            log::warn!("transfer candidate `{word}` has no embedding; skipping");
            continue;
        }
        candidates.insert(word.to_string());
    }
    let mut pairs = Vec::with_capacity(novel.len());
    for target in novel {
        if !vocab.contains(target) {
            return Err(DccError::validation(format!("novel word `{target}` is not in the vocabulary")));
        }
        if !concepts.is_novel(target) {
            return Err(DccError::validation(format!("novel word `{target}` is not a novel concept")));
        }
        if paired_words.contains(target) {
            return Err(DccError::validation(format!("novel word `{target}` appears in paired captions")));
        }
        if table.vocab().id(target).is_none() {
            return Err(DccError::validation(format!(
                "novel word `{target}` has no embedding: no language grounding, retrain embeddings"
            )));
        }
        let ranked = nearest_transfer_sources(target, table, &candidates, n)?;
        pairs.push(TransferGroup {
            target: target.clone(),
            sources: ranked.into_iter().map(|(word, similarity)| RankedSource { word, similarity }).collect(),
        });
    }
    Ok(TransferPlan { method, n, pairs })
}

/// How delta transfer sets the target's bias.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaBias {
    /// `b[v_a] := b[v_s]` for the nearest source, as in direct transfer.
    #[default]
    CopySource,
    /// `b[v_a] := b_language[v_a] + mean(b[v_s] - b_language[v_s])`.
    Delta,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferOptions {
    pub delta_bias: DeltaBias,
}

fn copy_column(m: &mut Tensor, from: usize, to: usize) {
    for r in 0..m.rows() {
        let v = m.get(r, from);
        m.set(r, to, v);
    }
}

/// Rules applied to `W_I` for one pair, after which `v_a` is coupled to row `r_a`.
fn couple_classifier(wi: &mut Tensor, p: &TransferPair) {
    copy_column(wi, p.v_s, p.v_a);
    let own = wi.get(p.r_s, p.v_s);
    wi.set(p.r_a, p.v_a, own);
    wi.set(p.r_s, p.v_a, 0.0);
    wi.set(p.r_a, p.v_s, 0.0);
}

fn check_bounds(params: &CaptionModelParams, groups: &[Vec<TransferPair>]) -> Result<()> {
    let (v, c) = (params.vocab().len(), params.concepts().len());
    for p in groups.iter().flatten() {
        if p.v_s >= v || p.v_a >= v || p.r_s >= c || p.r_a >= c {
            return Err(DccError::validation(format!(
                "pair {} -> {} indexes out of bounds (vocab {v}, concepts {c})",
                p.source, p.target
            )));
        }
        if p.v_s == p.v_a || p.r_s == p.r_a {
            return Err(DccError::validation(format!("pair {} -> {} maps a word onto itself", p.source, p.target)));
        }
    }
    Ok(())
}

/// Copies each nearest source's `W_L`/`b`/`W_I` columns onto its target.
pub fn direct_transfer(params: &CaptionModelParams, plan: &TransferPlan) -> Result<CaptionModelParams> {
    if plan.method != Regime::Direct {
        return Err(DccError::validation("direct_transfer needs a plan with method = direct"));
    }
    let groups = plan.resolve(params.vocab(), params.concepts())?;
    direct_transfer_pairs(params, &groups.into_iter().map(|g| g[0].clone()).collect::<Vec<_>>())
}

/// Direct transfer on pre-resolved pairs.
pub fn direct_transfer_pairs(params: &CaptionModelParams, pairs: &[TransferPair]) -> Result<CaptionModelParams> {
    check_bounds(params, &[pairs.to_vec()])?;
    let mut out = params.clone();
    let cap = out.cap_mut();
    for p in pairs {
        copy_column(cap.get_mut(CAP_WL)?, p.v_s, p.v_a);
        let b = cap.get_mut(CAP_B)?.data_mut();
        b[p.v_a] = b[p.v_s];
        couple_classifier(cap.get_mut(CAP_WI)?, p);
    }
    Ok(out)
}

/// Moves each target's language-model output weights by the mean
/// caption-training change of its ranked sources. `W_I` follows the direct
/// rules with the nearest source.
pub fn delta_transfer(params: &CaptionModelParams, plan: &TransferPlan, opts: TransferOptions) -> Result<CaptionModelParams> {
    if plan.method != Regime::Delta {
        return Err(DccError::validation("delta_transfer needs a plan with method = delta"));
    }
    let groups = plan.resolve(params.vocab(), params.concepts())?;
    delta_transfer_groups(params, &groups, opts)
}

/// Delta transfer on pre-resolved groups (nearest source first).
pub fn delta_transfer_groups(
    params: &CaptionModelParams,
    groups: &[Vec<TransferPair>],
    opts: TransferOptions,
) -> Result<CaptionModelParams> {
    check_bounds(params, groups)?;
    let src = params.cap();
    let (wl_lang, b_lang) = match (src.get(CAP_WL_LANG), src.get(CAP_B_LANG)) {
        (Ok(w), Ok(b)) => (w, b),
        _ => return Err(DccError::validation("delta transfer needs the language-model snapshot")),
    };
    let (wl, b) = (src.get(CAP_WL)?, src.get(CAP_B)?);
    let mut out = params.clone();
    for group in groups {
        let Some(nearest) = group.first() else {
            return Err(DccError::validation("transfer group without sources"));
        };
        let n = group.len() as f32;
        let v_a = nearest.v_a;
        let column: Vec<f32> = (0..wl.rows())
            .map(|r| {
                let sum: f32 = group.iter().map(|p| wl.get(r, p.v_s) - wl_lang.get(r, p.v_s)).sum();
                wl_lang.get(r, v_a) + sum / n
            })
            .collect();
        let cap = out.cap_mut();
        cap.get_mut(CAP_WL)?.set_column(v_a, &column);
        let new_b = match opts.delta_bias {
            DeltaBias::CopySource => b.data()[nearest.v_s],
            DeltaBias::Delta => {
                let sum: f32 = group.iter().map(|p| b.data()[p.v_s] - b_lang.data()[p.v_s]).sum();
                b_lang.data()[v_a] + sum / n
            }
        };
        cap.get_mut(CAP_B)?.data_mut()[v_a] = new_b;
        couple_classifier(cap.get_mut(CAP_WI)?, nearest);
    }
    Ok(out)
}

/// Dispatches on the plan's method.
pub fn apply_transfer(params: &CaptionModelParams, plan: &TransferPlan, opts: TransferOptions) -> Result<CaptionModelParams> {
    match plan.method {
        Regime::Direct => direct_transfer(params, plan),
        Regime::Delta => delta_transfer(params, plan, opts),
    }
}
