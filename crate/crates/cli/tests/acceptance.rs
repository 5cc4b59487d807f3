//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dcc::caption::{train_caption_with_hook, CaptionModelParams, CaptionTrainConfig, Regime, CAP_B, CAP_B_LANG, CAP_WI, CAP_WL, CAP_WL_LANG};
use dcc::checkpoint::{load_caption, load_language_model, load_lexical};
use dcc::config::RunConfig;
use dcc::corpus::{ConceptSet, FrameSpec, Visual, Vocabulary};
use dcc::eval::{bleu1, f1_novel_word};
use dcc::langmodel::{LanguageModelParams, LmDims};
use dcc::lexical::{mean_pool_frames, LexicalParams};
use dcc::numerics::ops::{affine_backward, apply_affine, sigmoid_cross_entropy, softmax_cross_entropy};
use dcc::numerics::{grad_check, Gradients, ParamStore, Rng, Tensor};
use dcc::pipeline::{run_pipeline, Corpora, PipelineOutcome};
use dcc::transfer::{delta_transfer, direct_transfer, RankedSource, TransferGroup, TransferOptions, TransferPlan};

const SURGERY_SECS_MAX: f64 = 1.0;
const GRAD_REL_ERR_MAX: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 20;
const GRAD_EPSILON: f64 = 1e-5;
const GRAD_SECS_MAX: f64 = 30.0;
const PRE_F1_MAX: f64 = 0.05;
const DIRECT_F1_MIN: f64 = 0.30;
const DELTA_F1_MIN: f64 = 0.20;
const BLEU_SLACK: f64 = 0.02;
const PIPELINE_SECS_MAX: f64 = 600.0;
const METRIC_TOL: f64 = 1e-6;
const F1_TRIALS: u64 = 1000;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn hand_model() -> CaptionModelParams {
    // vocab: <bos> <eos> <unk> giraffe zebra field; concept rows giraffe, zebra (novel), field
    let vocab = Vocabulary::from_words(["giraffe", "zebra", "field"].map(String::from)).unwrap();
    let concepts =
        ConceptSet::new([("giraffe".into(), false), ("zebra".into(), true), ("field".into(), false)]).unwrap();
    let lm = LanguageModelParams::init(LmDims { vocab: 6, embed: 2, hidden: 2 }, 0).unwrap();
    let lex = LexicalParams::init(concepts.clone(), 4, None, 0).unwrap();
    let mut m = CaptionModelParams::init(lm, lex, vocab, concepts).unwrap();
    let fill = |t: &mut Tensor, f: &dyn Fn(usize) -> f32| {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = f(i);
        }
    };
    let cap = m.cap_mut();
    fill(cap.get_mut(CAP_WI).unwrap(), &|i| 0.25 * (i as f32 + 1.0));
    fill(cap.get_mut(CAP_WL).unwrap(), &|i| (i as f32 * 0.7).sin() * 3.0);
    fill(cap.get_mut(CAP_WL_LANG).unwrap(), &|i| (i as f32 * 0.3).cos());
    fill(cap.get_mut(CAP_B).unwrap(), &|i| i as f32 - 2.5);
    fill(cap.get_mut(CAP_B_LANG).unwrap(), &|i| 0.1 * i as f32);
    m
}

fn rows(t: &Tensor) -> Vec<Vec<f32>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn plan(method: Regime, n: usize, sources: &[&str]) -> TransferPlan {
    TransferPlan {
        method,
        n,
        pairs: vec![TransferGroup {
            target: "zebra".into(),
            sources: sources.iter().map(|w| RankedSource { word: w.to_string(), similarity: 1.0 }).collect(),
        }],
    }
}

fn same_bits(a: &[Vec<f32>], b: &[Vec<f32>], what: &str) -> Result<(), String> {
    for (r, (x, y)) in a.iter().zip(b).enumerate() {
        for (c, (u, v)) in x.iter().zip(y).enumerate() {
            check(u.to_bits() == v.to_bits(), || format!("{what}[{r},{c}] = {v}, oracle {u}"))?;
        }
    }
    Ok(())
}

fn criterion_surgery() -> Outcome {
    let start = Instant::now();
    let m = hand_model();
    let (vs, va, rs, ra) = (3usize, 4usize, 0usize, 1usize);
    let (wi, wl, b) = (rows(m.w_i()), rows(m.w_l()), m.bias().data().to_vec());
    let wl_lang = rows(m.cap().get(CAP_WL_LANG).unwrap());

    // Independent application of the five direct rules.
    let mut o_wl = wl.clone();
    let mut o_b = b.clone();
    let mut o_wi = wi.clone();
    for row in o_wl.iter_mut() {
        row[va] = row[vs];
    }
    o_b[va] = o_b[vs];
    for row in o_wi.iter_mut() {
        row[va] = row[vs];
    }
    o_wi[ra][va] = o_wi[rs][vs];
    o_wi[rs][va] = 0.0;
    o_wi[ra][vs] = 0.0;

    let direct = direct_transfer(&m, &plan(Regime::Direct, 1, &["giraffe"])).map_err(|e| e.to_string())?;
    same_bits(&o_wi, &rows(direct.w_i()), "W_I")?;
    same_bits(&o_wl, &rows(direct.w_l()), "W_L")?;
    same_bits(&[o_b.clone()], &[direct.bias().data().to_vec()], "b")?;
    check(direct.w_i().get(rs, va) == 0.0 && direct.w_i().get(ra, vs) == 0.0, || "cross terms not zeroed".into())?;
    same_bits(&wl_lang, &rows(direct.cap().get(CAP_WL_LANG).unwrap()), "W_L_language")?;

    // Delta: W_L[:,v_a] = W_L_lang[:,v_a] + (W_L[:,v_s] - W_L_lang[:,v_s]) in f32.
    let mut d_wl = wl.clone();
    for (r, row) in d_wl.iter_mut().enumerate() {
        row[va] = wl_lang[r][va] + (wl[r][vs] - wl_lang[r][vs]);
    }
    let delta = delta_transfer(&m, &plan(Regime::Delta, 1, &["giraffe"]), TransferOptions::default())
        .map_err(|e| e.to_string())?;
    same_bits(&d_wl, &rows(delta.w_l()), "delta W_L")?;
    same_bits(&o_wi, &rows(delta.w_i()), "delta W_I")?;
    same_bits(&[o_b], &[delta.bias().data().to_vec()], "delta b")?;

    // N = 1 of the averaged variant is the plain update; N = 2 averages.
    let averaged_one = delta_transfer(&m, &plan(Regime::Delta, 3, &["giraffe"]), TransferOptions::default())
        .map_err(|e| e.to_string())?;
    same_bits(&rows(delta.w_l()), &rows(averaged_one.w_l()), "N=1 averaged W_L")?;
    let mut two = hand_model();
    let cap = two.cap_mut();
    cap.get_mut(CAP_WL).unwrap().set(0, 3, 3.0);
    cap.get_mut(CAP_WL_LANG).unwrap().set(0, 3, 1.0);
    cap.get_mut(CAP_WL).unwrap().set(0, 5, 5.0);
    cap.get_mut(CAP_WL_LANG).unwrap().set(0, 5, 1.0);
    cap.get_mut(CAP_WL_LANG).unwrap().set(0, 4, 0.0);
    let avg = delta_transfer(&two, &plan(Regime::Delta, 2, &["giraffe", "field"]), TransferOptions::default())
        .map_err(|e| e.to_string())?;
    check(avg.w_l().get(0, 4) == 3.0, || format!("mean of deltas 2 and 4 gave {}", avg.w_l().get(0, 4)))?;

    let secs = start.elapsed().as_secs_f64();
    check(secs < SURGERY_SECS_MAX, || format!("took {secs:.3} s"))?;
    Ok(format!("direct/delta match oracle bit-for-bit, N=1 == plain, {secs:.3} s"))
}

// ---------------------------------------------------------------- 2

fn randomize(store: &mut ParamStore<f64>, rng: &mut Rng, scale: f64) {
    for (_, p) in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v = rng.uniform(-scale, scale);
        }
    }
}

fn worst<F: Fn(u64) -> Result<f64, String>>(f: F) -> Result<f64, String> {
    let mut w = 0.0f64;
    for seed in 0..GRAD_INSTANCES {
        let e = f(seed)?;
        check(e < GRAD_REL_ERR_MAX, || format!("instance {seed}: relative error {e:.2e}"))?;
        w = w.max(e);
    }
    Ok(w)
}

fn lm_instance(seed: u64, steps: usize) -> Result<f64, String> {
    let mut rng = Rng::new(seed);
    let dims = LmDims { vocab: 4 + rng.below(4), embed: 1 + rng.below(5), hidden: 1 + rng.below(5) };
    let mut lm = LanguageModelParams::<f64>::init(dims, seed).map_err(|e| e.to_string())?;
    randomize(lm.store_mut(), &mut rng, 0.5);
    let ids: Vec<usize> = std::iter::once(0).chain((0..steps).map(|_| 1 + rng.below(dims.vocab - 1))).collect();
    let f = |s: &ParamStore<f64>| LanguageModelParams::from_store(s.clone())?.loss_and_grads(std::slice::from_ref(&ids));
    grad_check(f, lm.store(), GRAD_EPSILON).map_err(|e| e.to_string())
}

fn multimodal_instance(seed: u64) -> Result<f64, String> {
    let mut rng = Rng::new(seed);
    let words: Vec<String> = (0..2 + rng.below(4)).map(|i| format!("w{i}")).collect();
    let c = 1 + rng.below(words.len());
    let vocab = Vocabulary::from_words(words.clone()).map_err(|e| e.to_string())?;
    let concepts = ConceptSet::new(words[..c].iter().map(|w| (w.clone(), false))).map_err(|e| e.to_string())?;
    let dims = LmDims { vocab: vocab.len(), embed: 1 + rng.below(4), hidden: 1 + rng.below(4) };
    let lm = LanguageModelParams::<f64>::init(dims, seed).map_err(|e| e.to_string())?;
    let lex = LexicalParams::<f64>::init(concepts.clone(), 3, None, seed).map_err(|e| e.to_string())?;
    let mut model = CaptionModelParams::init(lm, lex, vocab, concepts).map_err(|e| e.to_string())?;
    randomize(model.cap_mut(), &mut rng, 1.0);
    let f_i: Vec<f64> = (0..c).map(|_| rng.uniform(0.0, 1.0)).collect();
    let f_l: Vec<f64> = (0..dims.embed + dims.hidden).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let target = rng.below(dims.vocab);
    let base = model.clone();
    let f = |s: &ParamStore<f64>| {
        let mut probe = base.clone();
        *probe.cap_mut() = s.clone();
        let mut g = probe.trainable_grads();
        let loss = probe.accumulate_token(&f_i, &f_l, target, 1.0, &mut g)?;
        Ok((loss, g))
    };
    grad_check(f, model.cap(), GRAD_EPSILON).map_err(|e| e.to_string())
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut report = BTreeMap::new();
    report.insert("affine", worst(|seed| {
        let mut rng = Rng::new(seed);
        let (n, m) = (1 + rng.below(8), 1 + rng.below(8));
        let mut store = ParamStore::new();
        for (name, shape) in [("x", vec![n]), ("w", vec![n, m]), ("b", vec![m])] {
            store.insert(name, rng.uniform_tensor(&shape, 1.0), true).map_err(|e| e.to_string())?;
        }
        let dy: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let f = |s: &ParamStore<f64>| {
            let (x, w, b) = (s.get("x")?, s.get("w")?, s.get("b")?);
            let y = apply_affine(x, w, b)?;
            let loss = y.data().iter().zip(&dy).map(|(a, c)| a * c).sum();
            let (mut dx, mut dw, mut db) = (vec![0.0; n], Tensor::zeros(&[n, m]), vec![0.0; m]);
            affine_backward(x.data(), w, &dy, Some(&mut dx), Some(&mut dw), Some(&mut db));
            let mut g = Gradients::new();
            g.insert("x", Tensor::from_vec(dx));
            g.insert("w", dw);
            g.insert("b", Tensor::from_vec(db));
            Ok((loss, g))
        };
        grad_check(f, &store, GRAD_EPSILON).map_err(|e| e.to_string())
    })?);
    report.insert("sigmoid-ce", worst(|seed| {
        let mut rng = Rng::new(100 + seed);
        let k = 1 + rng.below(8);
        let mut store = ParamStore::new();
        store.insert("z", rng.uniform_tensor(&[k], 3.0), true).map_err(|e| e.to_string())?;
        let t: Vec<f64> = (0..k).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
        let f = |s: &ParamStore<f64>| {
            let lg = sigmoid_cross_entropy(s.get("z")?.data(), &t)?;
            let mut g = Gradients::new();
            g.insert("z", Tensor::from_vec(lg.grad));
            Ok((lg.loss, g))
        };
        grad_check(f, &store, GRAD_EPSILON).map_err(|e| e.to_string())
    })?);
    report.insert("softmax-ce", worst(|seed| {
        let mut rng = Rng::new(200 + seed);
        let k = 1 + rng.below(8);
        let mut store = ParamStore::new();
        store.insert("z", rng.uniform_tensor(&[k], 3.0), true).map_err(|e| e.to_string())?;
        let target = rng.below(k);
        let f = |s: &ParamStore<f64>| {
            let lg = softmax_cross_entropy(s.get("z")?.data(), target)?;
            let mut g = Gradients::new();
            g.insert("z", Tensor::from_vec(lg.grad));
            Ok((lg.loss, g))
        };
        grad_check(f, &store, GRAD_EPSILON).map_err(|e| e.to_string())
    })?);
    report.insert("lstm-step", worst(|seed| lm_instance(300 + seed, 1))?);
    report.insert("bptt-3", worst(|seed| lm_instance(400 + seed, 3))?);
    report.insert("multimodal", worst(|seed| multimodal_instance(500 + seed))?);
    let secs = start.elapsed().as_secs_f64();
    check(secs < GRAD_SECS_MAX, || format!("took {secs:.1} s"))?;
    let summary: Vec<String> = report.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Ok(format!("{} instances per layer, worst errors: {}, {secs:.1} s", GRAD_INSTANCES, summary.join(", ")))
}

// ---------------------------------------------------------------- 3, 7, 8

struct Run {
    outcome: PipelineOutcome,
    secs: f64,
}

fn run(cfg: &RunConfig) -> Result<Run, String> {
    let start = Instant::now();
    let outcome = run_pipeline(cfg).map_err(|e| format!("pipeline failed: {e}"))?;
    Ok(Run { outcome, secs: start.elapsed().as_secs_f64() })
}

fn experiment_thresholds(run: &Run) -> Result<String, String> {
    let mut parts = Vec::new();
    for (regime, min) in [(Regime::Direct, DIRECT_F1_MIN), (Regime::Delta, DELTA_F1_MIN)] {
        let o = run.outcome.regime(regime).ok_or_else(|| format!("{regime} regime missing"))?;
        check(o.before.avg_f1 <= PRE_F1_MAX, || format!("{regime}: pre-transfer F1 {:.3} > {PRE_F1_MAX}", o.before.avg_f1))?;
        check(o.after.avg_f1 >= min, || format!("{regime}: post-transfer F1 {:.3} < {min}", o.after.avg_f1))?;
        check(o.after.bleu1 >= o.before.bleu1 - BLEU_SLACK, || {
            format!("{regime}: BLEU-1 fell {:.3} -> {:.3}", o.before.bleu1, o.after.bleu1)
        })?;
        parts.push(format!(
            "{regime} F1 {:.2}->{:.2} BLEU-1 {:.3}->{:.3}",
            o.before.avg_f1, o.after.avg_f1, o.before.bleu1, o.after.bleu1
        ));
    }
    check(run.secs < PIPELINE_SECS_MAX, || format!("pipeline took {:.0} s", run.secs))?;
    Ok(format!("{}; {:.1} s", parts.join("; "), run.secs))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        if name.ends_with(".ckpt") || name.ends_with(".json") {
            files.insert(name, std::fs::read(&p).unwrap());
        }
    }
    files
}

fn criterion_determinism(cfg: &RunConfig, first: &BTreeMap<String, Vec<u8>>) -> Outcome {
    run(cfg)?;
    let second = snapshot(&cfg.out_dir);
    check(first.keys().eq(second.keys()), || "different artifact sets".into())?;
    check(first.contains_key("report.json"), || "report.json missing".into())?;
    let ckpts = first.keys().filter(|k| k.ends_with(".ckpt")).count();
    for (name, bytes) in first {
        check(second[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{ckpts} checkpoints and {} JSON artifacts byte-identical", first.len() - ckpts))
}

fn criterion_no_repeats(run: &Run) -> Outcome {
    let mut captions = 0;
    for o in &run.outcome.regimes {
        for cap in o.captions_before.iter().chain(&o.captions_after) {
            captions += 1;
            if let Some(w) = cap.windows(2).find(|w| w[0] == w[1]) {
                return Err(format!("repeated `{}` in `{}`", w[0], cap.join(" ")));
            }
        }
    }
    Ok(format!("{captions} captions, no adjacent repeats"))
}

// ---------------------------------------------------------------- 4

fn criterion_freeze(out: &Path) -> Outcome {
    let lexical = load_lexical(&out.join("lexical.ckpt")).map_err(|e| e.to_string())?;
    let (lm, _) = load_language_model(&out.join("lm.ckpt")).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for regime in ["direct", "delta"] {
        let caption = load_caption(&out.join(format!("caption_{regime}.ckpt"))).map_err(|e| e.to_string())?;
        let pairs = caption.language_model().store().iter().zip(lm.store().iter());
        let pairs = pairs.chain(caption.lexical().store().iter().zip(lexical.store().iter()));
        for ((n1, a), (n2, b)) in pairs {
            check(n1 == n2 && a.tensor.bit_eq(&b.tensor), || format!("{regime}: `{n1}` changed during caption training"))?;
            compared += 1;
        }
    }

    let corpora = Corpora::load(&out.join("data")).map_err(|e| e.to_string())?;
    let (lm, vocab) = load_language_model(&out.join("lm.ckpt")).map_err(|e| e.to_string())?;
    let init = CaptionModelParams::init(lm, lexical, vocab, corpora.concepts.clone()).map_err(|e| e.to_string())?;
    let cfg = CaptionTrainConfig { regime: Regime::Delta, ..CaptionTrainConfig::default() };
    let phase1 = cfg.frozen_language_epochs();
    let mut held = None;
    train_caption_with_hook(init, &corpora.paired, &cfg, |epoch, m| {
        if epoch + 1 == phase1 {
            held = Some(m.cap().get(CAP_WL).unwrap().bit_eq(m.cap().get(CAP_WL_LANG).unwrap()));
        }
    })
    .map_err(|e| e.to_string())?;
    check(held == Some(true), || format!("cap.WL moved during the first {phase1} delta epochs"))?;
    Ok(format!("{compared} lm.*/lex.* tensors bit-identical; cap.WL == cap.WL_language after {phase1} delta epochs"))
}

// ---------------------------------------------------------------- 5

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn criterion_metrics() -> Outcome {
    let close = |a: f64, b: f64, what: &str| check((a - b).abs() <= METRIC_TOL, || format!("{what}: {a} vs {b}"));
    close(bleu1(&[toks("a zebra")], &[vec![toks("a zebra")]]).map_err(|e| e.to_string())?, 1.0, "exact match")?;
    close(bleu1(&[toks("a a a")], &[vec![toks("a b")]]).map_err(|e| e.to_string())?, 1.0 / 3.0, "clipping")?;
    close(bleu1(&[toks("a")], &[vec![toks("a b c")]]).map_err(|e| e.to_string())?, (-2.0f64).exp(), "brevity")?;
    let gen = vec![toks("a zebra"), toks("a zebra"), toks("a cat"), toks("a cat")];
    let refs = vec![vec![toks("a zebra")], vec![toks("a cat")], vec![toks("the zebra")], vec![toks("a dog")]];
    let s = f1_novel_word("zebra", &gen, &refs).map_err(|e| e.to_string())?;
    check((s.tp, s.fp, s.fn_) == (1, 1, 1), || format!("hand counts {:?}", (s.tp, s.fp, s.fn_)))?;
    close(s.precision, 0.5, "precision")?;
    close(s.recall, 0.5, "recall")?;
    close(s.f1, 0.5, "F1")?;
    let never = f1_novel_word("zebra", &[toks("a cat")], &[vec![toks("a zebra")]]).map_err(|e| e.to_string())?;
    close(never.f1, 0.0, "never emitted")?;

    let vocab = ["a", "z", "b"];
    let sentence = |rng: &mut Rng| -> Vec<String> { (0..rng.below(4)).map(|_| vocab[rng.below(3)].to_string()).collect() };
    for trial in 0..F1_TRIALS {
        let mut rng = Rng::new(trial);
        let n = 1 + rng.below(10);
        let gen: Vec<Vec<String>> = (0..n).map(|_| sentence(&mut rng)).collect();
        let refs: Vec<Vec<Vec<String>>> = (0..n).map(|_| (0..1 + rng.below(3)).map(|_| sentence(&mut rng)).collect()).collect();
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for i in 0..n {
            let g = gen[i].iter().any(|t| t == "z");
            let r = refs[i].iter().any(|s| s.iter().any(|t| t == "z"));
            match (g, r) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let s = f1_novel_word("z", &gen, &refs).map_err(|e| e.to_string())?;
        check((s.tp, s.fp, s.fn_) == (tp, fp, fn_), || format!("trial {trial}: recount mismatch"))?;
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        check((s.f1 - f1).abs() <= 1e-12, || format!("trial {trial}: F1 {} vs {f1}", s.f1))?;
    }
    Ok(format!("hand examples within {METRIC_TOL:e}; {F1_TRIALS} random corpora recounted exactly"))
}

// ---------------------------------------------------------------- 6

fn criterion_video(cfg: &RunConfig) -> Outcome {
    let mut rng = Rng::new(6);
    for _ in 0..100 {
        let (n, d) = (1 + rng.below(6), 1 + rng.below(8));
        let frames: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.uniform(-10.0, 10.0) as f32).collect()).collect();
        let pooled = mean_pool_frames(&frames).map_err(|e| e.to_string())?;
        for (j, &p) in pooled.iter().enumerate() {
            let mean = (frames.iter().map(|f| f[j] as f64).sum::<f64>() / n as f64) as f32;
            check(p.to_bits() == mean.to_bits(), || format!("pooled {p} vs mean {mean}"))?;
        }
    }
    let mut video = cfg.clone();
    video.synth.frames = Some(FrameSpec { min: 3, max: 6 });
    video.out_dir = cfg.out_dir.with_file_name("video");
    let r = run(&video)?;
    let corpora = Corpora::load(&video.out_dir.join("data")).map_err(|e| e.to_string())?;
    check(corpora.test.iter().all(|e| matches!(e.visual, Visual::Frames(_))), || "test set is not frame lists".into())?;
    let produced = r.outcome.regimes.iter().flat_map(|o| &o.captions_after).filter(|c| !c.is_empty()).count();
    check(produced > 0, || "no captions produced from frames".into())?;
    Ok(format!("pooling exact; frames: {}", experiment_thresholds(&r)?))
}

// ----------------------------------------------------------------

fn report(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS  criterion {id}: {name} ({detail}) [{secs:.1} s]");
            true
        }
        Err(why) => {
            println!("FAIL  criterion {id}: {name}: {why} [{secs:.1} s]");
            false
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let base: PathBuf = tmp.path().join("image");
    let cfg = RunConfig { out_dir: base.clone(), ..RunConfig::default() };

    let mut ok = true;
    ok &= report(1, "transfer surgery exactness", criterion_surgery);
    ok &= report(2, "gradient suite", criterion_gradients);

    let first = run(&cfg);
    let first_files = first.as_ref().ok().map(|_| snapshot(&base));
    let pipeline = |f: &dyn Fn(&Run) -> Outcome| -> Outcome {
        match &first {
            Ok(r) => f(r),
            Err(e) => Err(e.clone()),
        }
    };
    ok &= report(3, "end-to-end held-out experiment", || pipeline(&experiment_thresholds));
    ok &= report(4, "regime freeze contracts", || pipeline(&|_| criterion_freeze(&base)));
    ok &= report(5, "metric oracles", criterion_metrics);
    ok &= report(6, "video path", || criterion_video(&cfg));
    ok &= report(7, "determinism", || match &first_files {
        Some(files) => criterion_determinism(&cfg, files),
        None => Err("first pipeline run failed".into()),
    });
    ok &= report(8, "no-repeat decoding", || pipeline(&criterion_no_repeats));

    if !ok {
        std::process::exit(1);
    }
}
