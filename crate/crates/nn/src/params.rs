use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{NnError, Result};
use crate::tape::Gradients;
use crate::tensor::TensorBuffer;

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a parameter set, used to route tape gradients back to the owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SetId(u64);

impl SetId {
    fn fresh() -> Self {
        SetId(NEXT_SET_ID.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named tensors plus per-parameter Adam moments and a shared step counter.
#[derive(Debug)]
pub struct ParameterSet {
    id: SetId,
    names: Vec<String>,
    tensors: Vec<TensorBuffer>,
    moments: Vec<AdamMoments>,
    step: u64,
}

impl Clone for ParameterSet {
    /// Clones get a fresh [`SetId`]; gradients recorded against the original
    /// never land in the copy.
    fn clone(&self) -> Self {
        Self {
            id: SetId::fresh(),
            names: self.names.clone(),
            tensors: self.tensors.clone(),
            moments: self.moments.clone(),
            step: self.step,
        }
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self {
            id: SetId::fresh(),
            names: Vec::new(),
            tensors: Vec::new(),
            moments: Vec::new(),
            step: 0,
        }
    }

    pub fn id(&self) -> SetId {
        self.id
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: TensorBuffer) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(NnError::Config(format!("duplicate parameter '{name}'")));
        }
        let len = tensor.len();
        self.names.push(name);
        self.tensors.push(tensor);
        self.moments.push(AdamMoments {
            first: vec![0.0; len],
            second: vec![0.0; len],
        });
        Ok(self.tensors.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&TensorBuffer> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut TensorBuffer> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn tensor(&self, index: usize) -> &TensorBuffer {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut TensorBuffer {
        &mut self.tensors[index]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorBuffer)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn moments(&self, index: usize) -> &AdamMoments {
        &self.moments[index]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn restore_state(&mut self, index: usize, moments: AdamMoments) {
        self.moments[index] = moments;
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(TensorBuffer::len).sum()
    }

    /// Add every gradient in `grads` that belongs to this set.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (index, g) in grads.for_set(self.id) {
            self.tensors[index].accumulate_grad(g);
        }
    }

    pub fn has_gradients(&self) -> bool {
        self.tensors.iter().any(|t| t.grad().is_some())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(TensorBuffer::clear_grad);
    }

    /// Bitwise equality of parameter values (ignores ids, moments and grads).
    pub fn values_equal(&self, other: &ParameterSet) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.values()
                        .iter()
                        .zip(b.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One Adam step over every tensor that holds a gradient; gradients are consumed.
pub fn adam_update(params: &mut ParameterSet, learning_rate: f64) -> Result<()> {
    adam_update_with(params, learning_rate, AdamConfig::default())
}

pub fn adam_update_with(params: &mut ParameterSet, learning_rate: f64, cfg: AdamConfig) -> Result<()> {
    if !params.has_gradients() {
        return Err(NnError::Usage(
            "adam_update called without populated gradients".into(),
        ));
    }
    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (tensor, mom) in params.tensors.iter_mut().zip(params.moments.iter_mut()) {
        let Some(g) = tensor.take_grad() else {
            continue;
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Numeric("non-finite gradient in adam_update".into()));
        }
        for (((p, gi), m), v) in tensor
            .values_mut()
            .iter_mut()
            .zip(&g)
            .zip(mom.first.iter_mut())
            .zip(mom.second.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Polyak averaging: `target ← (1 − rate)·target + rate·online`.
pub fn soft_update(target: &mut ParameterSet, online: &ParameterSet, rate: f64) -> Result<()> {
    if target.names != online.names
        || target
            .tensors
            .iter()
            .zip(&online.tensors)
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(NnError::Config(
            "soft_update between parameter sets of different layout".into(),
        ));
    }
    for (t, o) in target.tensors.iter_mut().zip(&online.tensors) {
        for (tv, ov) in t.values_mut().iter_mut().zip(o.values()) {
            *tv = (1.0 - rate) * *tv + rate * ov;
        }
    }
    Ok(())
}
