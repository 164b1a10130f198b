//! Named parameter store with Adam state.
//!
//! Parameter names follow the canonical layer-naming scheme
//! (`enc1.conv1.weight`, `bridge.conv2.bias`, ...) so weights can be moved
//! between models by name. Iteration order is always lexicographic, which
//! keeps checkpoints and optimizer behavior deterministic.

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const EPS: f32 = 1e-8;

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    grad: Option<Vec<f32>>,
    m: Vec<f32>,
    v: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.numel();
        Param { value, grad: None, m: vec![0.0; n], v: vec![0.0; n], trainable: true }
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TensorError::UnknownParam(name.into()))
    }

    /// Overwrite a parameter value; the shape must match. Optimizer state is reset.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let param =
            self.params.get_mut(name).ok_or_else(|| TensorError::UnknownParam(name.into()))?;
        if param.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_value",
                detail: format!(
                    "{name}: stored {:?} vs incoming {:?}",
                    param.value.shape(),
                    value.shape()
                ),
            });
        }
        let n = value.numel();
        param.value = value;
        param.m = vec![0.0; n];
        param.v = vec![0.0; n];
        param.grad = None;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count over all tensors.
    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| TensorError::UnknownParam(name.into()))?;
        p.trainable = trainable;
        Ok(())
    }

    /// Freeze or unfreeze every parameter whose name starts with `prefix`.
    pub fn set_trainable_by_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
                n += 1;
            }
        }
        n
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: Vec<f32>) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| TensorError::UnknownParam(name.into()))?;
        if grad.len() != p.value.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "accumulate_grad",
                detail: format!("{name}: {} grad values for {} params", grad.len(), p.value.numel()),
            });
        }
        match &mut p.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(grad.iter()) {
                    *gi += di;
                }
            }
            slot @ None => *slot = Some(grad),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One Adam update over every trainable parameter that received a
    /// gradient. Gradients are cleared afterwards.
    pub fn adam_step(&mut self, lr: f32) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(TensorError::InvalidArgument(format!("learning rate {lr}")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - BETA1.powi(t);
        let bias2 = 1.0 - BETA2.powi(t);
        for (name, p) in self.params.iter_mut() {
            if !p.trainable {
                p.grad = None;
                continue;
            }
            let Some(grad) = p.grad.take() else { continue };
            let values = p.value.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                if !g.is_finite() {
                    return Err(TensorError::NonFinite { op: "adam_step" });
                }
                p.m[i] = BETA1 * p.m[i] + (1.0 - BETA1) * g;
                p.v[i] = BETA2 * p.v[i] + (1.0 - BETA2) * g * g;
                let m_hat = p.m[i] / bias1;
                let v_hat = p.v[i] / bias2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
            if !p.value.all_finite() {
                return Err(TensorError::NonFinite { op: "adam_step" });
            }
            let _ = name;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }
}
