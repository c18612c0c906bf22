use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use super::GradError;

/// A trainable tensor with its momentum buffer and pending gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub momentum: Tensor,
    pub grad: Option<Tensor>,
}

/// Named parameters, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), GradError> {
        if self.params.contains_key(name) {
            return Err(GradError::Contract(format!("duplicate parameter name {name:?}")));
        }
        let momentum = Tensor::zeros(value.shape());
        self.params.insert(name.to_string(), Param { value, momentum, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Records `name` on the tape as a named differentiable leaf.
    pub fn bind(&self, tape: &mut Tape, name: &str) -> Result<Var, GradError> {
        let value = self.get(name).ok_or_else(|| GradError::Contract(format!("unknown parameter {name:?}")))?;
        Ok(tape.named_leaf(name, value.clone()))
    }

    /// Records `name` on the tape as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape, name: &str) -> Result<Var, GradError> {
        let value = self.get(name).ok_or_else(|| GradError::Contract(format!("unknown parameter {name:?}")))?;
        Ok(tape.constant(value.clone()))
    }

    /// Adds the named gradients that belong to this set into `grad`.
    pub fn absorb(&mut self, grads: &Gradients) -> Result<(), GradError> {
        for (name, p) in self.params.iter_mut() {
            if let Some(g) = grads.named(name) {
                if g.shape() != p.value.shape() {
                    return Err(GradError::Dimension(format!("gradient for {name} has shape {:?}", g.shape())));
                }
                match &mut p.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => p.grad = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.grad = None);
    }

    /// Euclidean distance between two sets with identical layout.
    pub fn distance(&self, other: &ParamSet) -> Result<f64, GradError> {
        self.check_same_layout(other)?;
        let sq: f64 = self
            .params
            .values()
            .zip(other.params.values())
            .map(|(a, b)| a.value.data().iter().zip(b.value.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .sum();
        Ok(sq.sqrt())
    }

    pub fn check_same_layout(&self, other: &ParamSet) -> Result<(), GradError> {
        if self.params.len() != other.params.len() {
            return Err(GradError::Dimension("parameter sets differ in size".into()));
        }
        for ((na, a), (nb, b)) in self.params.iter().zip(&other.params) {
            if na != nb || a.value.shape() != b.value.shape() {
                return Err(GradError::Dimension(format!("parameter layout differs at {na} / {nb}")));
            }
        }
        Ok(())
    }
}

/// One SGD step with heavy-ball momentum and L2 weight decay:
/// `buf ← m·buf + g + wd·p`, `p ← p − lr·buf`. Clears the gradients.
pub fn sgd_step(params: &mut ParamSet, lr: f64, momentum: f64, weight_decay: f64) -> Result<(), GradError> {
    if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(GradError::Contract(format!("no gradient for parameter {name}")));
    }
    for (_, p) in params.iter_mut() {
        let g = p.grad.take().expect("checked above");
        let value = p.value.data_mut();
        let buf = p.momentum.data_mut();
        for ((w, b), gv) in value.iter_mut().zip(buf.iter_mut()).zip(g.data()) {
            *b = momentum * *b + gv + weight_decay * *w;
            *w -= lr * *b;
        }
    }
    Ok(())
}
