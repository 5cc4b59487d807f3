//! Stage functions and the end-to-end held-out experiment.
//!
//! Stage order is lexical classifier, embeddings, language model, caption
//! model, transfer, evaluation. Every stage writes its artifact to the output
//! directory and later stages read only what earlier ones produced.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::caption::{train_caption, CaptionModelParams, CaptionTrainConfig, Regime};
use crate::checkpoint::{save_caption, save_language_model, save_lexical};
use crate::config::RunConfig;
use crate::corpus::{
    build_vocab, generate_synthetic_dataset, load_concepts, load_paired, load_text, load_unpaired_images, ConceptSet,
    PairedExample, UnpairedImageExample, Vocabulary,
};
use crate::embeddings::{train_cbow, CbowConfig, EmbeddingTable};
use crate::error::{DccError, Result};
use crate::eval::{evaluate_run, EvalReport};
use crate::langmodel::{train_language_model, LanguageModelParams, LmTrainConfig};
use crate::lexical::{lexical_training_set, train_lexical, visual_features, LexicalParams, LexicalTrainConfig};
use crate::transfer::{apply_transfer, build_transfer_plan, TransferOptions, TransferPlan};

/// Everything a run reads.
#[derive(Clone, Debug)]
pub struct Corpora {
    pub paired: Vec<PairedExample>,
    pub unpaired_images: Vec<UnpairedImageExample>,
    pub unpaired_text: Vec<Vec<String>>,
    pub test: Vec<PairedExample>,
    pub concepts: ConceptSet,
}

impl Corpora {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Corpora {
            paired: load_paired(&dir.join("paired.jsonl"))?,
            unpaired_images: load_unpaired_images(&dir.join("unpaired_images.jsonl"))?,
            unpaired_text: load_text(&dir.join("unpaired_text.txt"))?,
            test: load_paired(&dir.join("test.jsonl"))?,
            concepts: load_concepts(&dir.join("concepts.json"))?,
        })
    }

    pub fn novel_words(&self) -> Vec<String> {
        self.concepts.novel_words().map(String::from).collect()
    }

    /// Rejects a split where a novel word leaks into paired captions.
    pub fn check_heldout(&self) -> Result<()> {
        let seen = paired_words(&self.paired);
        for w in self.concepts.novel_words() {
            if seen.contains(w) {
                return Err(DccError::validation(format!("novel word `{w}` appears in paired captions")));
            }
        }
        Ok(())
    }
}

/// Every token used in paired captions.
pub fn paired_words(paired: &[PairedExample]) -> BTreeSet<String> {
    paired.iter().flat_map(|ex| ex.captions.iter().flatten().cloned()).collect()
}

/// Vocabulary over unpaired text and paired captions.
pub fn caption_vocabulary(unpaired_text: &[Vec<String>], paired: &[PairedExample], min_count: usize) -> Vocabulary {
    let mut sentences = unpaired_text.to_vec();
    sentences.extend(paired.iter().flat_map(|ex| ex.captions.iter().cloned()));
    build_vocab(&sentences, min_count)
}

pub fn lexical_stage(corpora: &Corpora, cfg: &LexicalTrainConfig) -> Result<LexicalParams> {
    let data = lexical_training_set(&corpora.unpaired_images, &corpora.paired, &corpora.concepts)?;
    let first = data.first().ok_or_else(|| DccError::validation("no images to train the classifier on"))?;
    let init = LexicalParams::init(corpora.concepts.clone(), first.features.len(), cfg.hidden, cfg.seed)?;
    train_lexical(&data, init, cfg)
}

pub fn embedding_stage(corpora: &Corpora, vocab: &Vocabulary, cfg: &CbowConfig) -> Result<EmbeddingTable> {
    train_cbow(&corpora.unpaired_text, vocab, cfg)
}

pub fn language_model_stage(corpora: &Corpora, vocab: &Vocabulary, cfg: &LmTrainConfig) -> Result<LanguageModelParams> {
    train_language_model(&corpora.unpaired_text, vocab, cfg)
}

pub fn caption_stage(
    corpora: &Corpora,
    lexical: &LexicalParams,
    lm: &LanguageModelParams,
    vocab: &Vocabulary,
    cfg: &CaptionTrainConfig,
) -> Result<CaptionModelParams> {
    let init = CaptionModelParams::init(lm.clone(), lexical.clone(), vocab.clone(), corpora.concepts.clone())?;
    train_caption(init, &corpora.paired, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub avg_f1: f64,
    pub bleu1: f64,
}

impl From<&EvalReport> for Scores {
    fn from(r: &EvalReport) -> Self {
        Scores { avg_f1: r.avg_f1, bleu1: r.bleu1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub no_transfer: Scores,
    pub transfer: Scores,
}

#[derive(Clone, Debug)]
pub struct RegimeOutcome {
    pub regime: Regime,
    pub plan: TransferPlan,
    pub before: EvalReport,
    pub after: EvalReport,
    pub captions_before: Vec<Vec<String>>,
    pub captions_after: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub regimes: Vec<RegimeOutcome>,
    /// Post-transfer report for the configured transfer method.
    pub report: EvalReport,
}

impl PipelineOutcome {
    pub fn regime(&self, r: Regime) -> Option<&RegimeOutcome> {
        self.regimes.iter().find(|o| o.regime == r)
    }

    pub fn summary(&self) -> BTreeMap<String, RegimeSummary> {
        self.regimes
            .iter()
            .map(|o| (o.regime.to_string(), RegimeSummary { no_transfer: (&o.before).into(), transfer: (&o.after).into() }))
            .collect()
    }
}

fn write_captions(path: &Path, test: &[PairedExample], captions: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    for (ex, cap) in test.iter().zip(captions) {
        text.push_str(&ex.id);
        text.push('\t');
        text.push_str(&cap.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn echo(cfg: &RunConfig, regime: Regime, transfer: Option<Regime>) -> serde_json::Value {
    serde_json::json!({
        "run": cfg,
        "regime": regime,
        "transfer": transfer.map_or("none".to_string(), |t| t.to_string()),
        "max_len": cfg.max_len,
    })
}

/// Runs every stage from one config and writes all artifacts plus
/// `report.json` and `summary.json` under `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let cfg = cfg.effective();
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), cfg.to_json() + "\n")?;

    let corpora = match &cfg.data_dir {
        Some(dir) => Corpora::load(dir)?,
        None => {
            let ds = generate_synthetic_dataset(&cfg.synth)?;
            ds.save(&out.join("data"))?;
            Corpora::load(&out.join("data"))?
        }
    };
    corpora.check_heldout()?;
    let novel = corpora.novel_words();
    if novel.is_empty() {
        return Err(DccError::validation("concept set has no novel words"));
    }
    if let Some(ex) = corpora.test.first() {
        let f = visual_features(&ex.visual)?.len();
        log::info!("{} paired, {} unpaired images, {} sentences, {} test, feature dim {f}",
            corpora.paired.len(), corpora.unpaired_images.len(), corpora.unpaired_text.len(), corpora.test.len());
    }

    log::info!("stage: lexical classifier");
    let lexical = lexical_stage(&corpora, &cfg.lexical)?;
    save_lexical(&lexical, serde_json::to_value(&cfg.lexical)?, &out.join("lexical.ckpt"))?;

    let vocab = caption_vocabulary(&corpora.unpaired_text, &corpora.paired, cfg.vocab_min_count);
    std::fs::write(out.join("vocab.json"), vocab.to_json() + "\n")?;

    log::info!("stage: embeddings");
    let table = embedding_stage(&corpora, &vocab, &cfg.embeddings)?;
    table.save(&out.join("embeddings.tsv"))?;

    log::info!("stage: language model");
    let lm = language_model_stage(&corpora, &vocab, &cfg.lm)?;
    save_language_model(&lm, &vocab, serde_json::to_value(&cfg.lm)?, &out.join("lm.ckpt"))?;

    let seen = paired_words(&corpora.paired);
    let opts = TransferOptions { delta_bias: cfg.transfer.delta_bias };
    let mut regimes = Vec::new();
    for &regime in &cfg.regimes {
        log::info!("stage: caption model ({regime})");
        let caption_cfg = CaptionTrainConfig { regime, ..cfg.caption.clone() };
        let model = caption_stage(&corpora, &lexical, &lm, &vocab, &caption_cfg)?;
        save_caption(&model, serde_json::to_value(&caption_cfg)?, &out.join(format!("caption_{regime}.ckpt")))?;

        let (before, captions_before) = evaluate_run(&model, &corpora.test, &novel, cfg.max_len, echo(&cfg, regime, None))?;
        before.save(&out.join(format!("report_{regime}_no_transfer.json")))?;
        write_captions(&out.join(format!("captions_{regime}_no_transfer.txt")), &corpora.test, &captions_before)?;

        log::info!("stage: transfer ({regime})");
        let n = if regime == Regime::Direct { 1 } else { cfg.transfer.n };
        let plan = build_transfer_plan(&novel, &table, &vocab, &corpora.concepts, &seen, regime, n)?;
        plan.save(&out.join(format!("transfer_plan_{regime}.json")))?;
        let transferred = apply_transfer(&model, &plan, opts)?;
        save_caption(&transferred, serde_json::to_value(&plan)?, &out.join(format!("caption_{regime}_transferred.ckpt")))?;

        log::info!("stage: evaluate ({regime})");
        let (after, captions_after) =
            evaluate_run(&transferred, &corpora.test, &novel, cfg.max_len, echo(&cfg, regime, Some(regime)))?;
        after.save(&out.join(format!("report_{regime}.json")))?;
        write_captions(&out.join(format!("captions_{regime}.txt")), &corpora.test, &captions_after)?;
        log::info!(
            "{regime}: F1 {:.3} -> {:.3}, BLEU-1 {:.3} -> {:.3}",
            before.avg_f1,
            after.avg_f1,
            before.bleu1,
            after.bleu1
        );
        regimes.push(RegimeOutcome { regime, plan, before, after, captions_before, captions_after });
    }

    let chosen = regimes
        .iter()
        .find(|o| o.regime == cfg.transfer.method)
        .or(regimes.last())
        .expect("at least one regime")
        .after
        .clone();
    chosen.save(&out.join("report.json"))?;
    let outcome = PipelineOutcome { out_dir: out.clone(), regimes, report: chosen };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&outcome.summary())? + "\n")?;
    Ok(outcome)
}
