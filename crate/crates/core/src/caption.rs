//! The caption model: a linear multimodal unit over frozen concept
//! probabilities `f_I` and frozen language features `f_L`,
//!
//! ```text
//! p_w = softmax(f_I·W_I + f_L·W_L + b)
//! ```
//!
//! `W_L` and `b` start as copies of the language model's prediction layer,
//! and a second frozen copy (`cap.WL_language`, `cap.b_language`) is kept for
//! delta transfer. `W_I` starts at zero and is learned from paired data only.

use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptSet, PairedExample, Visual, Vocabulary, BOS_ID, EOS_ID, UNK_ID};
use crate::error::{DccError, Result};
use crate::langmodel::{LanguageModelParams, LstmState};
use crate::lexical::{visual_features, LexicalParams};
use crate::numerics::ops::{affine_accumulate, affine_backward, affine_into, softmax_cross_entropy, softmax_in_place};
use crate::numerics::{sgd_step, Gradients, ParamStore, Rng, Scalar, Tensor};

pub const CAP_WI: &str = "cap.WI";
pub const CAP_WL: &str = "cap.WL";
pub const CAP_B: &str = "cap.b";
pub const CAP_WL_LANG: &str = "cap.WL_language";
pub const CAP_B_LANG: &str = "cap.b_language";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Train `W_I`, `W_L` and `b` together throughout.
    Direct,
    /// Train `W_I` and `b` with `W_L` held at its language-model values for
    /// the first half of the epochs, then all three.
    Delta,
}

impl std::str::FromStr for Regime {
    type Err = DccError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Regime::Direct),
            "delta" => Ok(Regime::Delta),
            other => Err(DccError::config(format!("unknown regime `{other}` (expected direct|delta)"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Direct => "direct",
            Regime::Delta => "delta",
        })
    }
}

/// A probability distribution over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct WordDistribution<T = f32>(pub Vec<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModelParams<T: Scalar = f32> {
    /// `cap.*` tensors.
    cap: ParamStore<T>,
    lex: LexicalParams<T>,
    lm: LanguageModelParams<T>,
    vocab: Vocabulary,
    concepts: ConceptSet,
}

impl<T: Scalar> CaptionModelParams<T> {
    /// Joins a trained classifier and language model. `W_L`/`b` copy the
    /// language model's prediction layer, `W_I` is zero, and the frozen
    /// `*_language` copies are taken from the same source.
    pub fn init(
        mut lm: LanguageModelParams<T>,
        mut lex: LexicalParams<T>,
        vocab: Vocabulary,
        concepts: ConceptSet,
    ) -> Result<Self> {
        if lex.concepts().len() != concepts.len() {
            return Err(DccError::validation(format!(
                "classifier has {} concepts but caption model expects {}",
                lex.concepts().len(),
                concepts.len()
            )));
        }
        if lm.dims().vocab != vocab.len() {
            return Err(DccError::validation(format!(
                "language model vocabulary has {} words but caption vocabulary has {}",
                lm.dims().vocab,
                vocab.len()
            )));
        }
        concepts.check_vocabulary(&vocab)?;
        let pred_w = lm.store().get(crate::langmodel::LM_PRED_W)?.clone();
        let pred_b = lm.store().get(crate::langmodel::LM_PRED_B)?.clone();
        let mut cap = ParamStore::new();
        cap.insert(CAP_WI, Tensor::zeros(&[concepts.len(), vocab.len()]), true)?;
        cap.insert(CAP_WL, pred_w.clone(), true)?;
        cap.insert(CAP_B, pred_b.clone(), true)?;
        cap.insert(CAP_WL_LANG, pred_w, false)?;
        cap.insert(CAP_B_LANG, pred_b, false)?;
        lm.store_mut().freeze_all();
        lex.store_mut().freeze_all();
        Ok(CaptionModelParams { cap, lex, lm, vocab, concepts })
    }

    /// Reassembles a model from a combined `lex.*`/`lm.*`/`cap.*` store.
    pub fn from_store(store: &ParamStore<T>, vocab: Vocabulary, concepts: ConceptSet) -> Result<Self> {
        let mut lm = LanguageModelParams::from_store(store.subset("lm."))?;
        let mut lex = LexicalParams::from_store(store.subset("lex."), concepts.clone())?;
        lm.store_mut().freeze_all();
        lex.store_mut().freeze_all();
        let mut cap = store.subset("cap.");
        for name in [CAP_WI, CAP_WL, CAP_B, CAP_WL_LANG, CAP_B_LANG] {
            cap.get(name)?;
        }
        let (c, v, f) = (concepts.len(), vocab.len(), lm.dims().features());
        let shapes: [(&str, Vec<usize>); 5] = [
            (CAP_WI, vec![c, v]),
            (CAP_WL, vec![f, v]),
            (CAP_B, vec![v]),
            (CAP_WL_LANG, vec![f, v]),
            (CAP_B_LANG, vec![v]),
        ];
        for (name, shape) in &shapes {
            let got = cap.get(name)?.shape();
            if got != shape.as_slice() {
                return Err(DccError::shape(format!("`{name}` has shape {got:?}, expected {shape:?}")));
            }
        }
        cap.train_only(&[CAP_WI, CAP_WL, CAP_B]);
        Ok(CaptionModelParams { cap, lex, lm, vocab, concepts })
    }

    /// Every tensor (`lex.*`, `lm.*`, `cap.*`) in one store.
    pub fn full_store(&self) -> ParamStore<T> {
        let mut all = self.lex.store().clone();
        all.extend(self.lm.store().clone()).expect("disjoint prefixes");
        all.extend(self.cap.clone()).expect("disjoint prefixes");
        all
    }

    pub fn cap(&self) -> &ParamStore<T> {
        &self.cap
    }

    pub fn cap_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.cap
    }

    pub fn lexical(&self) -> &LexicalParams<T> {
        &self.lex
    }

    pub fn language_model(&self) -> &LanguageModelParams<T> {
        &self.lm
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn concepts(&self) -> &ConceptSet {
        &self.concepts
    }

    pub fn w_i(&self) -> &Tensor<T> {
        self.cap.tensor(CAP_WI)
    }

    pub fn w_l(&self) -> &Tensor<T> {
        self.cap.tensor(CAP_WL)
    }

    pub fn bias(&self) -> &Tensor<T> {
        self.cap.tensor(CAP_B)
    }

    pub fn cast<U: Scalar>(&self) -> CaptionModelParams<U> {
        CaptionModelParams {
            cap: self.cap.cast(),
            lex: self.lex.cast(),
            lm: self.lm.cast(),
            vocab: self.vocab.clone(),
            concepts: self.concepts.clone(),
        }
    }

    /// `f_I·W_I + f_L·W_L + b`.
    pub fn multimodal_logits(&self, f_i: &[T], f_l: &[T]) -> Result<Vec<T>> {
        let (wi, wl) = (self.w_i(), self.w_l());
        if f_i.len() != wi.rows() || f_l.len() != wl.rows() {
            return Err(DccError::shape(format!(
                "multimodal unit got f_I of length {} and f_L of length {}, expected {} and {}",
                f_i.len(),
                f_l.len(),
                wi.rows(),
                wl.rows()
            )));
        }
        let mut logits = vec![T::zero(); self.vocab.len()];
        affine_into(f_l, wl, Some(self.bias().data()), &mut logits);
        affine_accumulate(f_i, wi, &mut logits);
        Ok(logits)
    }

    pub fn multimodal_forward(&self, f_i: &[T], f_l: &[T]) -> Result<WordDistribution<T>> {
        let mut p = self.multimodal_logits(f_i, f_l)?;
        softmax_in_place(&mut p);
        Ok(WordDistribution(p))
    }

    /// Adds `scale · d(loss)/dθ` for the trainable `cap.*` tensors; returns the loss.
    pub fn accumulate_token(&self, f_i: &[T], f_l: &[T], target: usize, scale: T, grads: &mut Gradients<T>) -> Result<T> {
        let logits = self.multimodal_logits(f_i, f_l)?;
        let lg = softmax_cross_entropy(&logits, target)?;
        let dz: Vec<T> = lg.grad.iter().map(|&g| g * scale).collect();
        if let Some(g) = grads.get_mut(CAP_WI) {
            affine_backward(f_i, self.w_i(), &dz, None, Some(g), None);
        }
        if let Some(g) = grads.get_mut(CAP_WL) {
            affine_backward(f_l, self.w_l(), &dz, None, Some(g), None);
        }
        if let Some(g) = grads.get_mut(CAP_B) {
            for (a, &d) in g.data_mut().iter_mut().zip(&dz) {
                *a = *a + d;
            }
        }
        Ok(lg.loss)
    }

    /// Zeroed gradient buffers for the currently trainable `cap.*` tensors.
    pub fn trainable_grads(&self) -> Gradients<T> {
        let mut g = Gradients::new();
        for (name, p) in self.cap.iter() {
            if p.trainable {
                g.insert(name, Tensor::zeros(p.tensor.shape()));
            }
        }
        g
    }

    /// Concept probabilities for a feature vector or frame list.
    pub fn image_features(&self, visual: &Visual) -> Result<Vec<T>> {
        let x: Vec<T> = visual_features(visual)?.into_iter().map(|v| T::of(v as f64)).collect();
        Ok(self.lex.predict_concepts(&x)?.0)
    }

    /// Greedy decoding from `<bos>`. Each step takes the highest-scoring word
    /// other than `<bos>`, `<unk>` and the word just emitted (lowest index wins
    /// ties), and stops at `<eos>` or after `max_len` words.
    pub fn generate_caption(&self, visual: &Visual, max_len: usize) -> Result<Vec<String>> {
        if max_len == 0 {
            return Err(DccError::validation("max_len must be >= 1"));
        }
        let f_i = self.image_features(visual)?;
        let mut state = LstmState::zeros(self.lm.dims().hidden);
        let mut prev = BOS_ID;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (f_l, next) = self.lm.language_features(prev, &state)?;
            state = next;
            let logits = self.multimodal_logits(&f_i, &f_l)?;
            let mut best: Option<(usize, T)> = None;
            for (w, &z) in logits.iter().enumerate() {
                if w == BOS_ID || w == UNK_ID || w == prev {
                    continue;
                }
                if best.is_none_or(|(_, bz)| z > bz) {
                    best = Some((w, z));
                }
            }
            let (w, _) = best.ok_or_else(|| DccError::validation("no admissible word to emit"))?;
            if w == EOS_ID {
                break;
            }
            out.push(self.vocab.word(w).to_string());
            prev = w;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionTrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub clip: Option<f32>,
}

impl Default for CaptionTrainConfig {
    fn default() -> Self {
        CaptionTrainConfig { regime: Regime::Direct, epochs: 10, lr: 0.5, batch_size: 16, seed: 42, clip: Some(5.0) }
    }
}

impl CaptionTrainConfig {
    /// Number of leading epochs with `W_L` frozen.
    pub fn frozen_language_epochs(&self) -> usize {
        match self.regime {
            Regime::Direct => 0,
            Regime::Delta => self.epochs.div_ceil(2),
        }
    }
}

/// One caption's teacher-forced steps: language features and target word.
struct PreparedCaption {
    example: usize,
    steps: Vec<(Vec<f32>, usize)>,
}

struct Prepared {
    f_i: Vec<Vec<f32>>,
    captions: Vec<PreparedCaption>,
}

fn prepare(params: &CaptionModelParams, paired: &[PairedExample]) -> Result<Prepared> {
    let mut f_i = Vec::with_capacity(paired.len());
    let mut captions = Vec::new();
    for (i, ex) in paired.iter().enumerate() {
        f_i.push(params.image_features(&ex.visual).map_err(|e| match e {
            DccError::Shape(m) => DccError::Shape(format!("example `{}`: {m}", ex.id)),
            other => other,
        })?);
        for cap in &ex.captions {
            let ids = params.vocab.encode_sentence(cap);
            let feats = params.lm.sequence_features(&ids[..ids.len() - 1])?;
            captions.push(PreparedCaption { example: i, steps: feats.into_iter().zip(ids[1..].iter().copied()).collect() });
        }
    }
    Ok(Prepared { f_i, captions })
}

fn prepared_loss(params: &CaptionModelParams, data: &Prepared) -> Result<f64> {
    let (mut total, mut n) = (0.0f64, 0usize);
    for cap in &data.captions {
        for (f_l, target) in &cap.steps {
            let logits = params.multimodal_logits(&data.f_i[cap.example], f_l)?;
            total += softmax_cross_entropy(&logits, *target)?.loss as f64;
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}

/// Per-epoch mean token cross-entropy; entry 0 is before training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub epoch_losses: Vec<f64>,
}

pub fn train_caption(params: CaptionModelParams, paired: &[PairedExample], cfg: &CaptionTrainConfig) -> Result<CaptionModelParams> {
    train_caption_with_hook(params, paired, cfg, |_, _| {}).map(|(p, _)| p)
}

/// Teacher-forced minibatch SGD on the multimodal unit only. `f_I` and the
/// language features are computed once up front since their producers are
/// frozen. `hook(epoch, params)` runs after every epoch.
pub fn train_caption_with_hook(
    mut params: CaptionModelParams,
    paired: &[PairedExample],
    cfg: &CaptionTrainConfig,
    mut hook: impl FnMut(usize, &CaptionModelParams),
) -> Result<(CaptionModelParams, CaptionReport)> {
    if paired.is_empty() {
        return Err(DccError::validation("caption training needs paired examples"));
    }
    if cfg.batch_size == 0 {
        return Err(DccError::config("batch size must be > 0"));
    }
    let data = prepare(&params, paired)?;
    let mut rng = Rng::derived(cfg.seed, "caption-train");
    let mut order: Vec<usize> = (0..data.captions.len()).collect();
    let mut losses = vec![prepared_loss(&params, &data)?];
    let frozen = cfg.frozen_language_epochs();
    for epoch in 0..cfg.epochs {
        if epoch < frozen {
            params.cap.train_only(&[CAP_WI, CAP_B]);
        } else {
            params.cap.train_only(&[CAP_WI, CAP_WL, CAP_B]);
        }
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let tokens: usize = chunk.iter().map(|&c| data.captions[c].steps.len()).sum();
            let scale = 1.0 / tokens as f32;
            let mut grads = params.trainable_grads();
            for &c in chunk {
                let cap = &data.captions[c];
                for (f_l, target) in &cap.steps {
                    params.accumulate_token(&data.f_i[cap.example], f_l, *target, scale, &mut grads)?;
                }
            }
            if let Some(c) = cfg.clip {
                grads.clip_global_norm(c);
            }
            sgd_step(&mut params.cap, &grads, cfg.lr)?;
        }
        let loss = prepared_loss(&params, &data)?;
        log::info!("caption ({}) epoch {}: cross-entropy {loss:.4}", cfg.regime, epoch + 1);
        losses.push(loss);
        hook(epoch, &params);
    }
    params.cap.train_only(&[CAP_WI, CAP_WL, CAP_B]);
    Ok((params, CaptionReport { epoch_losses: losses }))
}
