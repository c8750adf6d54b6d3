//! Named trainable parameters and SGD with momentum.

use std::collections::HashMap;

use super::tape::Gradients;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
    /// L2 regularization applies only to dense weights.
    pub weight_decay: bool,
}

/// Ordered collection of parameters, addressable by id or name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        weight_decay: bool,
    ) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.clone(),
            grad: Tensor::zeros(shape.clone()),
            momentum: Tensor::zeros(shape),
            value,
            weight_decay,
        });
        self.by_name.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {}: expected shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Overwrites stored gradients with the ones produced by a backward pass.
    /// Parameters the pass did not reach get a zero gradient.
    pub fn load_grads(&mut self, grads: &Gradients<T>) {
        self.zero_grads();
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            p.grad.data_mut().copy_from_slice(g.data());
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// One SGD step with heavy-ball momentum:
/// `buf = momentum * buf + grad (+ weight_decay * value if flagged)`, `value -= lr * buf`.
pub fn sgd_momentum_step<T: Scalar>(
    store: &mut ParamStore<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if let Some(bad) = store.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of parameter {}",
            bad.name
        )));
    }
    for p in store.iter_mut() {
        let decay = if p.weight_decay {
            weight_decay
        } else {
            T::zero()
        };
        let value = p.value.data_mut();
        let buf = p.momentum.data_mut();
        for ((v, b), &g) in value.iter_mut().zip(buf.iter_mut()).zip(p.grad.data()) {
            *b = momentum * *b + g + decay * *v;
            *v -= lr * *b;
        }
    }
    Ok(())
}
