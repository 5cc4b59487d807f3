//! The lexical classifier: feature vector to independent per-concept
//! probabilities.
//!
//! The default model is a single affine layer followed by a sigmoid. An
//! optional tanh hidden layer handles features that are not linearly
//! separable. Video inputs are mean-pooled over frames before classification.

use serde::{Deserialize, Serialize};

use crate::corpus::{derive_concept_labels, label_vector, ConceptSet, PairedExample, UnpairedImageExample, Visual};
use crate::error::{DccError, Result};
use crate::numerics::ops::{affine_backward, affine_into, sigmoid, sigmoid_cross_entropy};
use crate::numerics::{sgd_step, Gradients, ParamStore, Rng, Scalar, Tensor};

pub const LEX_W: &str = "lex.W";
pub const LEX_B: &str = "lex.b";
pub const LEX_HIDDEN_W: &str = "lex.hidden.W";
pub const LEX_HIDDEN_B: &str = "lex.hidden.b";

/// Element-wise mean of equally sized frame vectors.
pub fn mean_pool_frames(frames: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = frames.first().ok_or_else(|| DccError::shape("cannot mean-pool an empty frame list"))?;
    let dim = first.len();
    if let Some(f) = frames.iter().find(|f| f.len() != dim) {
        return Err(DccError::shape(format!("ragged frames: lengths {dim} and {}", f.len())));
    }
    let mut acc = vec![0.0f64; dim];
    for f in frames {
        for (a, &v) in acc.iter_mut().zip(f) {
            *a += v as f64;
        }
    }
    let n = frames.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// The classifier input for an example: its features, or pooled frames.
pub fn visual_features(visual: &Visual) -> Result<Vec<f32>> {
    match visual {
        Visual::Features(f) => Ok(f.clone()),
        Visual::Frames(fr) => mean_pool_frames(fr),
    }
}

/// Probability per concept row, each in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptProbabilities<T = f32>(pub Vec<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct LexicalParams<T: Scalar = f32> {
    store: ParamStore<T>,
    concepts: ConceptSet,
    feature_dim: usize,
}

impl<T: Scalar> LexicalParams<T> {
    /// Small uniform weights and zero biases. `hidden` adds a tanh layer of that width.
    pub fn init(concepts: ConceptSet, feature_dim: usize, hidden: Option<usize>, seed: u64) -> Result<Self> {
        if feature_dim == 0 {
            return Err(DccError::config("feature dimension must be > 0"));
        }
        let c = concepts.len();
        let mut rng = Rng::derived(seed, "lexical-init");
        let mut store = ParamStore::new();
        let mut width = feature_dim;
        if let Some(h) = hidden {
            if h == 0 {
                return Err(DccError::config("hidden width must be > 0"));
            }
            store.insert(LEX_HIDDEN_W, rng.uniform_tensor(&[feature_dim, h], 0.08), true)?;
            store.insert(LEX_HIDDEN_B, Tensor::zeros(&[h]), true)?;
            width = h;
        }
        store.insert(LEX_W, rng.uniform_tensor(&[width, c], 0.08), true)?;
        store.insert(LEX_B, Tensor::zeros(&[c]), true)?;
        Ok(LexicalParams { store, concepts, feature_dim })
    }

    /// Rebuilds from named tensors (`lex.*`), checking shapes against the concept set.
    pub fn from_store(store: ParamStore<T>, concepts: ConceptSet) -> Result<Self> {
        let w = store.get(LEX_W)?;
        let b = store.get(LEX_B)?;
        if w.shape().len() != 2 || w.cols() != concepts.len() || b.shape() != [concepts.len()] {
            return Err(DccError::shape(format!(
                "lexical weights {:?}/{:?} do not match {} concepts",
                w.shape(),
                b.shape(),
                concepts.len()
            )));
        }
        let feature_dim = if store.contains(LEX_HIDDEN_W) {
            let hw = store.get(LEX_HIDDEN_W)?;
            let hb = store.get(LEX_HIDDEN_B)?;
            if hw.shape().len() != 2 || hw.cols() != w.rows() || hb.shape() != [w.rows()] {
                return Err(DccError::shape("lexical hidden layer does not match output layer"));
            }
            hw.rows()
        } else {
            w.rows()
        };
        Ok(LexicalParams { store, concepts, feature_dim })
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    pub fn concepts(&self) -> &ConceptSet {
        &self.concepts
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn has_hidden(&self) -> bool {
        self.store.contains(LEX_HIDDEN_W)
    }

    pub fn cast<U: Scalar>(&self) -> LexicalParams<U> {
        LexicalParams { store: self.store.cast(), concepts: self.concepts.clone(), feature_dim: self.feature_dim }
    }

    fn check_input(&self, features: &[T]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(DccError::shape(format!(
                "feature length {} but classifier expects {}",
                features.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Returns (hidden activations if any, logits).
    fn logits(&self, features: &[T]) -> (Option<Vec<T>>, Vec<T>) {
        let w = self.store.tensor(LEX_W);
        let b = self.store.tensor(LEX_B);
        let mut logits = vec![T::zero(); w.cols()];
        if self.has_hidden() {
            let hw = self.store.tensor(LEX_HIDDEN_W);
            let mut h = vec![T::zero(); hw.cols()];
            affine_into(features, hw, Some(self.store.tensor(LEX_HIDDEN_B).data()), &mut h);
            h.iter_mut().for_each(|v| *v = v.tanh());
            affine_into(&h, w, Some(b.data()), &mut logits);
            (Some(h), logits)
        } else {
            affine_into(features, w, Some(b.data()), &mut logits);
            (None, logits)
        }
    }

    pub fn predict_concepts(&self, features: &[T]) -> Result<ConceptProbabilities<T>> {
        self.check_input(features)?;
        let (_, logits) = self.logits(features);
        Ok(ConceptProbabilities(logits.into_iter().map(sigmoid).collect()))
    }

    /// Mean sigmoid cross-entropy over a batch and its gradients.
    pub fn loss_and_grads(&self, batch: &[(&[T], &[T])]) -> Result<(T, Gradients<T>)> {
        if batch.is_empty() {
            return Err(DccError::validation("empty batch"));
        }
        let mut grads = self.store.zeros_like();
        let mut total = T::zero();
        let n = T::from_usize(batch.len()).unwrap();
        for (x, y) in batch {
            self.check_input(x)?;
            let (hidden, logits) = self.logits(x);
            let lg = sigmoid_cross_entropy(&logits, y)?;
            total = total + lg.loss;
            let dz: Vec<T> = lg.grad.iter().map(|&g| g / n).collect();
            let w = self.store.tensor(LEX_W);
            match hidden {
                None => {
                    affine_backward(x, w, &dz, None, Some(grads.entry(LEX_W)), None);
                }
                Some(h) => {
                    let mut dh = vec![T::zero(); h.len()];
                    affine_backward(&h, w, &dz, Some(&mut dh), Some(grads.entry(LEX_W)), None);
                    for (d, &a) in dh.iter_mut().zip(&h) {
                        *d = *d * (T::one() - a * a);
                    }
                    let hw = self.store.tensor(LEX_HIDDEN_W);
                    affine_backward(x, hw, &dh, None, Some(grads.entry(LEX_HIDDEN_W)), None);
                    let hb = grads.entry(LEX_HIDDEN_B).data_mut();
                    for (g, &d) in hb.iter_mut().zip(&dh) {
                        *g = *g + d;
                    }
                }
            }
            let gb = grads.entry(LEX_B).data_mut();
            for (g, &d) in gb.iter_mut().zip(&dz) {
                *g = *g + d;
            }
        }
        Ok((total / n, grads))
    }
}

/// Features and binary concept labels for one training image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub features: Vec<f32>,
    pub labels: Vec<f32>,
}

/// Classifier training data from unpaired images (given labels) and paired
/// examples (labels derived from captions). Videos are mean-pooled.
pub fn lexical_training_set(
    unpaired: &[UnpairedImageExample],
    paired: &[PairedExample],
    concepts: &ConceptSet,
) -> Result<Vec<LabeledFeatures>> {
    let mut out = Vec::with_capacity(unpaired.len() + paired.len());
    for ex in unpaired {
        out.push(LabeledFeatures { features: visual_features(&ex.visual)?, labels: label_vector(&ex.labels, concepts)? });
    }
    for ex in paired {
        out.push(LabeledFeatures {
            features: visual_features(&ex.visual)?,
            labels: derive_concept_labels(ex, concepts),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexicalTrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables.
    pub clip: Option<f32>,
    /// Width of the optional tanh hidden layer.
    pub hidden: Option<usize>,
}

impl Default for LexicalTrainConfig {
    fn default() -> Self {
        LexicalTrainConfig { epochs: 30, lr: 0.1, batch_size: 16, seed: 42, clip: Some(5.0), hidden: None }
    }
}

/// Mean sigmoid cross-entropy of `params` over `data`.
pub fn lexical_loss(params: &LexicalParams, data: &[LabeledFeatures]) -> Result<f32> {
    let batch: Vec<(&[f32], &[f32])> = data.iter().map(|d| (d.features.as_slice(), d.labels.as_slice())).collect();
    let mut total = 0.0f64;
    for (x, y) in &batch {
        let (_, logits) = params.logits(x);
        total += sigmoid_cross_entropy(&logits, y)?.loss as f64;
    }
    Ok((total / batch.len().max(1) as f64) as f32)
}

/// Minibatch SGD on mean sigmoid cross-entropy, starting from `init`.
pub fn train_lexical(
    data: &[LabeledFeatures],
    init: LexicalParams,
    cfg: &LexicalTrainConfig,
) -> Result<LexicalParams> {
    if data.is_empty() {
        return Err(DccError::validation("lexical classifier needs at least one training example"));
    }
    for d in data {
        init.check_input(&d.features)?;
        if d.labels.len() != init.concepts.len() {
            return Err(DccError::shape(format!(
                "label vector of length {} for {} concepts",
                d.labels.len(),
                init.concepts.len()
            )));
        }
    }
    if cfg.batch_size == 0 {
        return Err(DccError::config("batch size must be > 0"));
    }
    let mut params = init;
    let mut rng = Rng::derived(cfg.seed, "lexical-train");
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f32], &[f32])> =
                chunk.iter().map(|&i| (data[i].features.as_slice(), data[i].labels.as_slice())).collect();
            let (_, mut grads) = params.loss_and_grads(&batch)?;
            if let Some(c) = cfg.clip {
                grads.clip_global_norm(c);
            }
            sgd_step(&mut params.store, &grads, cfg.lr)?;
        }
        log::debug!("lexical epoch {epoch}: loss {:.5}", lexical_loss(&params, data)?);
    }
    Ok(params)
}

/// Average precision of `scores` against binary `labels` (ties scored in
/// index order). Returns `None` when there are no positives.
pub fn average_precision(scores: &[f32], labels: &[f32]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l > 0.5).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut sum) = (0usize, 0.0f64);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] > 0.5 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}
