use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;

use super::matrix::Matrix;
use super::tape::Gradients;
use crate::error::{Error, Result};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

/// Index of an entry inside a [`ParamStore`]. Stores with the same layout
/// (e.g. clones) accept the same ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A parameter id qualified by the store it was read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub(crate) store: u64,
    pub(crate) index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Saved with the model but never touched by the optimizer (running statistics).
    Buffer,
}

#[derive(Debug)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Matrix,
    pub grad: Matrix,
    /// Multiplier on the optimizer learning rate for this entry.
    pub lr_scale: f64,
    pub(crate) m: Matrix,
    pub(crate) v: Matrix,
}

/// Named trainable tensors with gradient and Adam moment slots.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    entries: Vec<ParamEntry>,
    index: IndexMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: next_uid(),
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.clone(),
                    grad: e.grad.clone(),
                    lr_scale: e.lr_scale,
                    m: e.m.clone(),
                    v: e.v.clone(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { uid: next_uid(), entries: Vec::new(), index: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::validation(name, "duplicate parameter name"));
        }
        let (r, c) = value.shape();
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.clone(),
            kind,
            value,
            grad: Matrix::zeros(r, c),
            lr_scale: 1.0,
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        });
        self.index.insert(name, id);
        Ok(ParamId(id))
    }

    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.entries[id.0].lr_scale = scale;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub(crate) fn key(&self, id: ParamId) -> ParamKey {
        ParamKey { store: self.uid, index: id.0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].grad
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.entries().filter(|(_, e)| e.kind == ParamKind::Trainable).map(|(id, _)| id).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Adds the gradients that belong to this store; entries from other stores are ignored.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (key, g) in grads.param_grads() {
            if key.store == self.uid {
                self.entries[key.index].grad.add_assign(g);
            }
        }
    }

    /// Blends batch statistics recorded during a training-mode forward pass
    /// into the running buffers: `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, grads: &Gradients, momentum: f64) {
        for (key, batch) in grads.running_updates() {
            if key.store == self.uid {
                let run = &mut self.entries[key.index].value;
                for (r, b) in run.data_mut().iter_mut().zip(batch.data()) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update over every trainable entry; `step` is 1-based.
/// Gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig, step: u64) {
    let step = step.max(1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(step);
    let bc2 = 1.0 - cfg.beta2.powi(step);
    for e in &mut store.entries {
        if e.kind == ParamKind::Trainable {
            let g = e.grad.data();
            let m = e.m.data_mut();
            let v = e.v.data_mut();
            let w = e.value.data_mut();
            let lr = cfg.lr * e.lr_scale;
            for i in 0..g.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        e.grad.fill(0.0);
    }
}
