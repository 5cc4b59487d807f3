use crate::error::{DccError, Result};
use crate::numerics::store::{Gradients, ParamStore};

/// Compares analytic gradients from `f` with central differences over every
/// trainable scalar of `store`, returning the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `f` returns the loss and its analytic gradients; parameters missing from
/// the returned gradients are taken to have zero gradient.
pub fn grad_check<F>(f: F, store: &ParamStore<f64>, epsilon: f64) -> Result<f64>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, Gradients<f64>)>,
{
    if !(epsilon > 0.0) {
        return Err(DccError::validation(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (loss, analytic) = f(store)?;
    if !loss.is_finite() {
        return Err(DccError::NonFinite(format!("objective evaluated to {loss}")));
    }
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        if !store.is_trainable(&name) {
            continue;
        }
        let n = store.get(&name)?.len();
        for i in 0..n {
            let orig = store.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + epsilon;
            let (plus, _) = f(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - epsilon;
            let (minus, _) = f(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(DccError::NonFinite(format!("objective non-finite near `{name}`[{i}]")));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.get(&name).map(|g| g.data()[i]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
