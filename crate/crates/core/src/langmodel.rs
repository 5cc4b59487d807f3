//! Word-level LSTM language model.
//!
//! Each step embeds the previous word, runs one LSTM step, and concatenates
//! the embedding with the LSTM output into the language features `[e ‖ h]`.
//! A linear prediction layer maps those features to next-word logits. The
//! caption model reuses the embedding and LSTM unchanged and starts its own
//! language weights from the prediction layer.

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, BOS_ID, EOS_ID};
use crate::error::{DccError, Result};
use crate::numerics::ops::{affine_accumulate, affine_backward, affine_into, sigmoid, softmax_cross_entropy, softmax_in_place};
use crate::numerics::{sgd_step, Gradients, ParamStore, Rng, Scalar, Tensor};

pub const LM_EMBED: &str = "lm.embed";
pub const LM_PRED_W: &str = "lm.pred.W";
pub const LM_PRED_B: &str = "lm.pred.b";

/// Gate order: input, forget, output, candidate.
pub const LSTM_W: [&str; 4] = ["lm.lstm.Wi", "lm.lstm.Wf", "lm.lstm.Wo", "lm.lstm.Wg"];
pub const LSTM_U: [&str; 4] = ["lm.lstm.Ui", "lm.lstm.Uf", "lm.lstm.Uo", "lm.lstm.Ug"];
pub const LSTM_B: [&str; 4] = ["lm.lstm.bi", "lm.lstm.bf", "lm.lstm.bo", "lm.lstm.bg"];
const FORGET: usize = 1;
const CANDIDATE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl LmDims {
    pub fn features(&self) -> usize {
        self.embed + self.hidden
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T = f32> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![T::zero(); hidden], c: vec![T::zero(); hidden] }
    }
}

/// Activations kept from one forward step for backprop.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    gates: [Vec<T>; 4],
    tanh_c: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModelParams<T: Scalar = f32> {
    store: ParamStore<T>,
    dims: LmDims,
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<T: Scalar> LanguageModelParams<T> {
    /// Uniform(-0.08, 0.08) weights, zero biases except forget-gate bias 1.
    pub fn init(dims: LmDims, seed: u64) -> Result<Self> {
        if dims.vocab < 4 || dims.embed == 0 || dims.hidden == 0 {
            return Err(DccError::config(format!("invalid language model dims {dims:?}")));
        }
        let mut rng = Rng::derived(seed, "lm-init");
        let (e, h, v) = (dims.embed, dims.hidden, dims.vocab);
        let mut store = ParamStore::new();
        store.insert(LM_EMBED, rng.uniform_tensor(&[v, e], 0.08), true)?;
        for g in 0..4 {
            store.insert(LSTM_W[g], rng.uniform_tensor(&[e, h], 0.08), true)?;
            store.insert(LSTM_U[g], rng.uniform_tensor(&[h, h], 0.08), true)?;
            let mut b = Tensor::zeros(&[h]);
            if g == FORGET {
                b.fill(T::one());
            }
            store.insert(LSTM_B[g], b, true)?;
        }
        store.insert(LM_PRED_W, rng.uniform_tensor(&[e + h, v], 0.08), true)?;
        store.insert(LM_PRED_B, Tensor::zeros(&[v]), true)?;
        Ok(LanguageModelParams { store, dims })
    }

    /// Rebuilds from `lm.*` tensors, inferring and checking dimensions.
    pub fn from_store(store: ParamStore<T>) -> Result<Self> {
        let embed = store.get(LM_EMBED)?;
        if embed.shape().len() != 2 {
            return Err(DccError::shape(format!("`{LM_EMBED}` must be 2-D, got {:?}", embed.shape())));
        }
        let (v, e) = (embed.rows(), embed.cols());
        let h = store.get(LSTM_B[0])?.len();
        let expect = |name: &str, shape: &[usize]| -> Result<()> {
            let got = store.get(name)?.shape();
            if got != shape {
                return Err(DccError::shape(format!("`{name}` has shape {got:?}, expected {shape:?}")));
            }
            Ok(())
        };
        for g in 0..4 {
            expect(LSTM_W[g], &[e, h])?;
            expect(LSTM_U[g], &[h, h])?;
            expect(LSTM_B[g], &[h])?;
        }
        expect(LM_PRED_W, &[e + h, v])?;
        expect(LM_PRED_B, &[v])?;
        Ok(LanguageModelParams { store, dims: LmDims { vocab: v, embed: e, hidden: h } })
    }

    pub fn dims(&self) -> LmDims {
        self.dims
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

    pub fn cast<U: Scalar>(&self) -> LanguageModelParams<U> {
        LanguageModelParams { store: self.store.cast(), dims: self.dims }
    }

    pub fn embedding(&self, word: usize) -> Result<&[T]> {
        if word >= self.dims.vocab {
            return Err(DccError::validation(format!("word index {word} out of range for {} words", self.dims.vocab)));
        }
        Ok(self.store.tensor(LM_EMBED).row(word))
    }

    fn step_cached(&self, x: &[T], state: &LstmState<T>) -> (LstmState<T>, LstmCache<T>) {
        let h = self.dims.hidden;
        let gates: [Vec<T>; 4] = std::array::from_fn(|g| {
            let mut a = vec![T::zero(); h];
            affine_into(x, self.store.tensor(LSTM_W[g]), Some(self.store.tensor(LSTM_B[g]).data()), &mut a);
            affine_accumulate(&state.h, self.store.tensor(LSTM_U[g]), &mut a);
            if g == CANDIDATE {
                a.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                a.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            a
        });
        let [i, f, o, g] = &gates;
        let c: Vec<T> = (0..h).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<T> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
        let next = LstmState { h: h_new, c };
        let cache = LstmCache { x: x.to_vec(), h_prev: state.h.clone(), c_prev: state.c.clone(), gates, tanh_c };
        (next, cache)
    }

    /// One LSTM step; returns the output `h'` and the new state `(h', c')`.
    pub fn lstm_step(&self, x: &[T], state: &LstmState<T>) -> Result<(Vec<T>, LstmState<T>)> {
        if x.len() != self.dims.embed || state.h.len() != self.dims.hidden || state.c.len() != self.dims.hidden {
            return Err(DccError::shape(format!(
                "lstm step got x={}, h={}, c={} for dims {:?}",
                x.len(),
                state.h.len(),
                state.c.len(),
                self.dims
            )));
        }
        let (next, _) = self.step_cached(x, state);
        Ok((next.h.clone(), next))
    }

    /// Backprop through one step. `dh`/`dc` are gradients wrt this step's
    /// outputs; returns gradients wrt `(x, h_prev, c_prev)`.
    fn step_backward(
        &self,
        cache: &LstmCache<T>,
        dh: &[T],
        dc_in: &[T],
        grads: &mut Gradients<T>,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let n = self.dims.hidden;
        let [i, f, o, g] = &cache.gates;
        let mut dc = vec![T::zero(); n];
        let mut pre: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); n]);
        for k in 0..n {
            let t = cache.tanh_c[k];
            dc[k] = dc_in[k] + dh[k] * o[k] * (T::one() - t * t);
            let d_o = dh[k] * t;
            let d_i = dc[k] * g[k];
            let d_g = dc[k] * i[k];
            let d_f = dc[k] * cache.c_prev[k];
            pre[0][k] = d_i * i[k] * (T::one() - i[k]);
            pre[1][k] = d_f * f[k] * (T::one() - f[k]);
            pre[2][k] = d_o * o[k] * (T::one() - o[k]);
            pre[3][k] = d_g * (T::one() - g[k] * g[k]);
        }
        let dc_prev: Vec<T> = (0..n).map(|k| dc[k] * f[k]).collect();
        let mut dx = vec![T::zero(); self.dims.embed];
        let mut dh_prev = vec![T::zero(); n];
        for gi in 0..4 {
            affine_backward(&cache.x, self.store.tensor(LSTM_W[gi]), &pre[gi], Some(&mut dx), Some(grads.entry(LSTM_W[gi])), None);
            affine_backward(
                &cache.h_prev,
                self.store.tensor(LSTM_U[gi]),
                &pre[gi],
                Some(&mut dh_prev),
                Some(grads.entry(LSTM_U[gi])),
                None,
            );
            add_into(grads.entry(LSTM_B[gi]).data_mut(), &pre[gi]);
        }
        (dx, dh_prev, dc_prev)
    }

    /// Embeds `prev_word`, steps the LSTM and returns `[embedding ‖ h']` with the new state.
    pub fn language_features(&self, prev_word: usize, state: &LstmState<T>) -> Result<(Vec<T>, LstmState<T>)> {
        let e = self.embedding(prev_word)?.to_vec();
        let (h, next) = self.lstm_step(&e, state)?;
        let mut f = e;
        f.extend_from_slice(&h);
        Ok((f, next))
    }

    /// Language features at every position of `inputs`, from a zero state.
    pub fn sequence_features(&self, inputs: &[usize]) -> Result<Vec<Vec<T>>> {
        let mut state = LstmState::zeros(self.dims.hidden);
        inputs
            .iter()
            .map(|&w| {
                let (f, next) = self.language_features(w, &state)?;
                state = next;
                Ok(f)
            })
            .collect()
    }

    pub fn next_logits(&self, features: &[T]) -> Result<Vec<T>> {
        if features.len() != self.dims.features() {
            return Err(DccError::shape(format!(
                "language features of length {} but model expects {}",
                features.len(),
                self.dims.features()
            )));
        }
        let mut logits = vec![T::zero(); self.dims.vocab];
        affine_into(features, self.store.tensor(LM_PRED_W), Some(self.store.tensor(LM_PRED_B).data()), &mut logits);
        Ok(logits)
    }

    /// Next-word distribution `softmax(f_L·W + b)` from the prediction layer.
    pub fn lm_next_distribution(&self, features: &[T]) -> Result<Vec<T>> {
        let mut p = self.next_logits(features)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Teacher-forced cross-entropy of one `<bos> ... <eos>` id sequence.
    /// Adds `d(sum loss)/dθ · scale` into `grads` and returns the summed loss.
    pub fn accumulate_sequence(&self, ids: &[usize], scale: T, grads: &mut Gradients<T>) -> Result<T> {
        if ids.len() < 2 {
            return Err(DccError::validation("sequence needs at least two tokens"));
        }
        let (e, n) = (self.dims.embed, ids.len() - 1);
        let mut state = LstmState::zeros(self.dims.hidden);
        let mut caches = Vec::with_capacity(n);
        let mut feats = Vec::with_capacity(n);
        let mut dlogits = Vec::with_capacity(n);
        let mut total = T::zero();
        for t in 0..n {
            let x = self.embedding(ids[t])?.to_vec();
            let (next, cache) = self.step_cached(&x, &state);
            let mut f = x;
            f.extend_from_slice(&next.h);
            let logits = self.next_logits(&f)?;
            let lg = softmax_cross_entropy(&logits, ids[t + 1])?;
            total = total + lg.loss;
            dlogits.push(lg.grad.into_iter().map(|g| g * scale).collect::<Vec<T>>());
            feats.push(f);
            caches.push(cache);
            state = next;
        }
        let pred = self.store.tensor(LM_PRED_W);
        let mut dh_next = vec![T::zero(); self.dims.hidden];
        let mut dc_next = vec![T::zero(); self.dims.hidden];
        for t in (0..n).rev() {
            let mut df = vec![T::zero(); self.dims.features()];
            affine_backward(&feats[t], pred, &dlogits[t], Some(&mut df), Some(grads.entry(LM_PRED_W)), None);
            add_into(grads.entry(LM_PRED_B).data_mut(), &dlogits[t]);
            add_into(&mut dh_next, &df[e..]);
            let (dx, dh_prev, dc_prev) = self.step_backward(&caches[t], &dh_next, &dc_next, grads);
            let de = grads.entry(LM_EMBED).row_mut(ids[t]);
            add_into(de, &dx);
            add_into(de, &df[..e]);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(total)
    }

    /// Mean per-token cross-entropy over a batch of id sequences, with gradients.
    pub fn loss_and_grads(&self, batch: &[Vec<usize>]) -> Result<(T, Gradients<T>)> {
        let tokens: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
        if tokens == 0 {
            return Err(DccError::validation("empty batch"));
        }
        let scale = T::one() / T::from_usize(tokens).unwrap();
        let mut grads = self.store.zeros_like();
        let mut total = T::zero();
        for ids in batch {
            total = total + self.accumulate_sequence(ids, scale, &mut grads)?;
        }
        Ok((total * scale, grads))
    }

    /// Mean per-token cross-entropy (no gradients).
    pub fn mean_cross_entropy(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        let (mut total, mut tokens) = (0.0f64, 0usize);
        for ids in corpus {
            let feats = self.sequence_features(&ids[..ids.len() - 1])?;
            for (f, &target) in feats.iter().zip(&ids[1..]) {
                total += softmax_cross_entropy(&self.next_logits(f)?, target)?.loss.as_f64();
                tokens += 1;
            }
        }
        if tokens == 0 {
            return Err(DccError::validation("empty corpus"));
        }
        Ok(total / tokens as f64)
    }

    pub fn perplexity(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        Ok(self.mean_cross_entropy(corpus)?.exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub clip: Option<f32>,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig { embed_dim: 32, hidden_dim: 64, epochs: 8, lr: 1.0, batch_size: 16, seed: 42, clip: Some(5.0) }
    }
}

/// Per-epoch mean training cross-entropy; entry 0 is before training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub epoch_losses: Vec<f64>,
}

/// `<bos> tokens <eos>` id sequences, with unknown words mapped to `<unk>`.
pub fn encode_corpus(sentences: &[Vec<String>], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    sentences.iter().map(|s| vocab.encode_sentence(s)).collect()
}

pub fn train_language_model(sentences: &[Vec<String>], vocab: &Vocabulary, cfg: &LmTrainConfig) -> Result<LanguageModelParams> {
    train_language_model_with_report(sentences, vocab, cfg).map(|(p, _)| p)
}

/// Teacher-forced minibatch SGD with full backprop through each sentence.
pub fn train_language_model_with_report(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    cfg: &LmTrainConfig,
) -> Result<(LanguageModelParams, LmReport)> {
    if sentences.is_empty() {
        return Err(DccError::validation("language model needs a non-empty corpus"));
    }
    if cfg.batch_size == 0 {
        return Err(DccError::config("batch size must be > 0"));
    }
    let dims = LmDims { vocab: vocab.len(), embed: cfg.embed_dim, hidden: cfg.hidden_dim };
    let mut params = LanguageModelParams::<f32>::init(dims, cfg.seed)?;
    let corpus = encode_corpus(sentences, vocab);
    debug_assert!(corpus.iter().all(|s| s[0] == BOS_ID && *s.last().unwrap() == EOS_ID));
    let mut rng = Rng::derived(cfg.seed, "lm-train");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut losses = vec![params.mean_cross_entropy(&corpus)?];
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            let (_, mut grads) = params.loss_and_grads(&batch)?;
            if let Some(c) = cfg.clip {
                grads.clip_global_norm(c);
            }
            sgd_step(&mut params.store, &grads, cfg.lr)?;
        }
        let loss = params.mean_cross_entropy(&corpus)?;
        log::info!("lm epoch {}: cross-entropy {loss:.4}", epoch + 1);
        losses.push(loss);
    }
    Ok((params, LmReport { epoch_losses: losses }))
}
