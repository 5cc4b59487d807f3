use indexmap::IndexMap;

use crate::error::{DccError, Result};
use crate::numerics::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in insertion order, each with a trainable flag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(DccError::validation(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| DccError::validation(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| DccError::validation(format!("unknown parameter `{name}`")))
    }

    /// Panicking accessor for names the owning model created itself.
    pub(crate) fn tensor(&self, name: &str) -> &Tensor<T> {
        &self.params[name].tensor
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        match self.params.get_mut(name) {
            Some(p) => {
                p.trainable = trainable;
                Ok(())
            }
            None => Err(DccError::validation(format!("unknown parameter `{name}`"))),
        }
    }

    /// Marks exactly the parameters in `names` trainable.
    pub fn train_only(&mut self, names: &[&str]) {
        for (name, p) in self.params.iter_mut() {
            p.trainable = names.contains(&name.as_str());
        }
    }

    pub fn freeze_all(&mut self) {
        self.params.values_mut().for_each(|p| p.trainable = false);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), Param { tensor: p.tensor.cast(), trainable: p.trainable }))
                .collect(),
        }
    }

    /// Moves every parameter of `other` into `self`, keeping its flag.
    pub fn extend(&mut self, other: ParamStore<T>) -> Result<()> {
        for (name, p) in other.params {
            self.insert(name, p.tensor, p.trainable)?;
        }
        Ok(())
    }

    /// The parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients(self.params.iter().map(|(k, p)| (k.clone(), Tensor::zeros(p.tensor.shape()))).collect())
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T: Scalar = f32>(pub IndexMap<String, Tensor<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients(IndexMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.0.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.0.get_mut(name)
    }

    pub(crate) fn entry(&mut self, name: &str) -> &mut Tensor<T> {
        self.0.get_mut(name).expect("gradient buffer allocated by owner")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn scale(&mut self, s: T) {
        self.0.values_mut().for_each(|g| g.scale(s));
    }

    pub fn global_norm(&self) -> T {
        self.0.values().map(|g| g.sum_squares()).sum::<T>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// One plain SGD update `w <- w - lr * g` over trainable parameters.
///
/// Every gradient must name an existing parameter of the same shape. Frozen
/// parameters are skipped entirely and so stay bit-identical.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
    if !(lr >= T::zero()) || !lr.is_finite() {
        return Err(DccError::validation(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    for (name, g) in grads.iter() {
        let p = store
            .params
            .get(name)
            .ok_or_else(|| DccError::validation(format!("gradient for unknown parameter `{name}`")))?;
        if p.tensor.shape() != g.shape() {
            return Err(DccError::validation(format!(
                "gradient `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                p.tensor.shape()
            )));
        }
    }
    if lr == T::zero() {
        return Ok(());
    }
    for (name, g) in grads.iter() {
        let p = store.params.get_mut(name).expect("checked above");
        if !p.trainable {
            continue;
        }
        for (w, &d) in p.tensor.data_mut().iter_mut().zip(g.data()) {
            *w = *w - lr * d;
        }
    }
    Ok(())
}
