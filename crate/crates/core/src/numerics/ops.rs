//! Layer kernels with explicit backward passes.
//!
//! The slice kernels (`affine_into`, `affine_backward`, ...) are what the
//! model code calls in its inner loops; the tensor-level wrappers check shapes
//! and are the public contract.

use crate::error::{DccError, Result};
use crate::numerics::tensor::{Scalar, Tensor};

/// A scalar loss and its gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `out = x·W (+ b)`, with `x` of length n and `W` n×m.
pub fn affine_into<T: Scalar>(x: &[T], w: &Tensor<T>, b: Option<&[T]>, out: &mut [T]) {
    match b {
        Some(b) => out.copy_from_slice(b),
        None => out.fill(T::zero()),
    }
    affine_accumulate(x, w, out);
}

/// `out += x·W`.
pub fn affine_accumulate<T: Scalar>(x: &[T], w: &Tensor<T>, out: &mut [T]) {
    let m = w.cols();
    debug_assert_eq!(x.len(), w.rows());
    debug_assert_eq!(out.len(), m);
    let wd = w.data();
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let row = &wd[i * m..(i + 1) * m];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o = *o + xi * wij;
        }
    }
}

/// Backward of `y = x·W + b` given `dy`; each output is accumulated into when present.
pub fn affine_backward<T: Scalar>(
    x: &[T],
    w: &Tensor<T>,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut Tensor<T>>,
    db: Option<&mut [T]>,
) {
    let m = w.cols();
    if let Some(dx) = dx {
        let wd = w.data();
        for (i, d) in dx.iter_mut().enumerate() {
            let row = &wd[i * m..(i + 1) * m];
            let s: T = row.iter().zip(dy).map(|(&a, &b)| a * b).sum();
            *d = *d + s;
        }
    }
    if let Some(dw) = dw {
        let gd = dw.data_mut();
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &mut gd[i * m..(i + 1) * m];
            for (g, &d) in row.iter_mut().zip(dy) {
                *g = *g + xi * d;
            }
        }
    }
    if let Some(db) = db {
        for (g, &d) in db.iter_mut().zip(dy) {
            *g = *g + d;
        }
    }
}

fn check_affine_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<()> {
    if x.shape().len() != 1 || w.shape().len() != 2 || x.len() != w.rows() {
        return Err(DccError::shape(format!(
            "affine input {:?} incompatible with weights {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if let Some(b) = b {
        if b.shape() != [w.cols()] {
            return Err(DccError::shape(format!(
                "affine bias {:?} incompatible with weights {:?}",
                b.shape(),
                w.shape()
            )));
        }
    }
    Ok(())
}

/// `x·W + b` for a vector `x` of length n, `W` n×m and `b` of length m.
pub fn apply_affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_affine_shapes(x, w, Some(b))?;
    let mut out = vec![T::zero(); w.cols()];
    affine_into(x.data(), w, Some(b.data()), &mut out);
    Ok(Tensor::from_vec(out))
}

pub fn apply_affine_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<AffineGrads<T>> {
    check_affine_shapes(x, w, None)?;
    if dy.shape() != [w.cols()] {
        return Err(DccError::shape(format!(
            "upstream gradient {:?} incompatible with weights {:?}",
            dy.shape(),
            w.shape()
        )));
    }
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = vec![T::zero(); w.cols()];
    affine_backward(x.data(), w, dy.data(), Some(&mut gx), Some(&mut gw), Some(&mut gb));
    Ok(AffineGrads { x: Tensor::from_vec(gx), w: gw, b: Tensor::from_vec(gb) })
}

/// Max-subtracted softmax, in place.
pub fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in z.iter_mut() {
        *v = *v / total;
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> Result<Vec<T>> {
    if z.is_empty() {
        return Err(DccError::shape("softmax of an empty vector"));
    }
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = z.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Mean binary cross-entropy over independent sigmoid outputs.
///
/// Uses `max(z,0) - z·t + ln(1 + e^{-|z|})` so large logits never overflow.
pub fn sigmoid_cross_entropy<T: Scalar>(logits: &[T], targets: &[T]) -> Result<LossGrad<T>> {
    if logits.len() != targets.len() {
        return Err(DccError::shape(format!(
            "logits length {} vs targets length {}",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(DccError::shape("sigmoid cross-entropy of an empty vector"));
    }
    if let Some(t) = targets.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(DccError::validation(format!("non-binary target {t}")));
    }
    let m = T::from_usize(logits.len()).unwrap();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(targets) {
        loss = loss + z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - t) / m);
    }
    Ok(LossGrad { loss: loss / m, grad })
}

/// `-ln softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<LossGrad<T>> {
    if target >= logits.len() {
        return Err(DccError::validation(format!(
            "target index {target} out of range for {} classes",
            logits.len()
        )));
    }
    let mut grad = softmax(logits)?;
    let loss = log_sum_exp(logits) - logits[target];
    grad[target] = grad[target] - T::one();
    Ok(LossGrad { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn affine_identity_and_diag() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let y = apply_affine(&t(&[1.0, 2.0]), &eye, &t(&[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let w = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let y = apply_affine(&t(&[1.0, -1.0]), &w, &t(&[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, -2.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let w = Tensor::<f64>::zeros(&[2, 2]);
        let err = apply_affine(&t(&[1.0, 2.0, 3.0]), &w, &t(&[0.0, 0.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(softmax::<f64>(&[]).is_err());
        // stays finite far from zero
        let p = softmax(&[1000.0f32, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_ce_cases() {
        let lg = sigmoid_cross_entropy(&[0.0f64, 0.0, 0.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!((lg.loss - 2f64.ln()).abs() < 1e-12);
        let lg = sigmoid_cross_entropy(&[20.0f64], &[1.0]).unwrap();
        assert!(lg.loss < 1e-8);
        assert!(sigmoid_cross_entropy(&[0.0f64], &[0.5]).is_err());
        assert!(sigmoid_cross_entropy(&[0.0f64], &[1.0, 0.0]).is_err());
        let lg = sigmoid_cross_entropy(&[-800.0f64, 800.0], &[1.0, 0.0]).unwrap();
        assert!(lg.loss.is_finite());
    }

    #[test]
    fn softmax_ce_cases() {
        let v = 7;
        let lg = softmax_cross_entropy(&vec![0.3f64; v], 2).unwrap();
        assert!((lg.loss - (v as f64).ln()).abs() < 1e-12);
        let mut z = vec![0.0f64; 5];
        z[3] = 30.0;
        assert!(softmax_cross_entropy(&z, 3).unwrap().loss < 1e-8);
        assert!(softmax_cross_entropy(&z, 5).is_err());
    }

    use crate::numerics::{grad_check, Gradients, ParamStore, Rng};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn softmax_normalized_and_shift_invariant(
            z in prop::collection::vec(-30.0f64..30.0, 1..16),
            c in -50.0f64..50.0,
        ) {
            let p = softmax(&z).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            for (a, b) in p.iter().zip(softmax(&shifted).unwrap()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn random_store(rng: &mut Rng, shapes: &[(&str, Vec<usize>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, shape) in shapes {
            s.insert(*name, rng.uniform_tensor(shape, 1.0), true).unwrap();
        }
        s
    }

    #[test]
    fn affine_gradients_on_random_shapes() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let (n, m) = (1 + rng.below(8), 1 + rng.below(8));
            let store = random_store(&mut rng, &[("x", vec![n]), ("w", vec![n, m]), ("b", vec![m])]);
            let dy: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let f = |s: &ParamStore<f64>| {
                let (x, w, b) = (s.get("x")?, s.get("w")?, s.get("b")?);
                let y = apply_affine(x, w, b)?;
                let loss: f64 = y.data().iter().zip(&dy).map(|(a, c)| a * c).sum();
                let mut g = Gradients::new();
                let mut dx = vec![0.0; n];
                let mut dw = Tensor::zeros(&[n, m]);
                let mut db = vec![0.0; m];
                affine_backward(x.data(), w, &dy, Some(&mut dx), Some(&mut dw), Some(&mut db));
                g.insert("x", Tensor::from_vec(dx));
                g.insert("w", dw);
                g.insert("b", Tensor::from_vec(db));
                Ok((loss, g))
            };
            let err = grad_check(f, &store, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn cross_entropy_gradients_on_random_shapes() {
        for seed in 0..20 {
            let mut rng = Rng::new(1000 + seed);
            let k = 1 + rng.below(8);
            let store = random_store(&mut rng, &[("z", vec![k])]);
            let targets: Vec<f64> = (0..k).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
            let target = rng.below(k);
            let sig = |s: &ParamStore<f64>| {
                let lg = sigmoid_cross_entropy(s.get("z")?.data(), &targets)?;
                let mut g = Gradients::new();
                g.insert("z", Tensor::from_vec(lg.grad));
                Ok((lg.loss, g))
            };
            let soft = |s: &ParamStore<f64>| {
                let lg = softmax_cross_entropy(s.get("z")?.data(), target)?;
                let mut g = Gradients::new();
                g.insert("z", Tensor::from_vec(lg.grad));
                Ok((lg.loss, g))
            };
            assert!(grad_check(sig, &store, 1e-5).unwrap() < 1e-4, "sigmoid seed {seed}");
            assert!(grad_check(soft, &store, 1e-5).unwrap() < 1e-4, "softmax seed {seed}");
        }
    }
}
