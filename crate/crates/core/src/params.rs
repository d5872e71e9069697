//! Named parameter storage with gradient slots.
//!
//! Every trainable weight and every persistent layer buffer (power-iteration
//! vectors, batch-norm running statistics) lives in one [`ParamStore`]. Layers
//! only keep [`ParamId`] handles, so a frozen model can run forward passes
//! from many threads over a shared `&ParamStore`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, Tensor};

/// Which network a parameter belongs to. Optimizers and phase updates
/// select parameters by group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Encoder,
    Decoder,
    Discriminator,
    Embedder,
    Forecaster,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
    /// Accumulated gradient; `None` for buffers.
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn trainable(&self) -> bool {
        self.grad.is_some()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, group: Group, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = trainable.then(|| Tensor::zeros(value.shape()));
        self.params.push(Param {
            name,
            group,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        self.insert(name.into(), group, value, true)
    }

    /// A persistent, non-trainable state tensor.
    pub fn add_buffer(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        self.insert(name.into(), group, value, false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    /// Gradient slot of a trainable parameter.
    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.params[id.0].grad.as_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, groups: &[Group]) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable() && groups.contains(&p.group))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    /// Number of trainable scalars, per group when `group` is given.
    pub fn count(&self, group: Option<Group>) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable() && group.is_none_or(|g| p.group == g))
            .map(|p| p.value.len())
            .sum()
    }

    /// Adds the tape gradients of parameters in `groups` to their slots;
    /// gradients of every other parameter are discarded.
    pub fn accumulate(&mut self, grads: &Gradients, groups: &[Group]) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            if !groups.contains(&p.group) {
                continue;
            }
            if let Some(slot) = p.grad.as_mut() {
                slot.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(s, v)| *s += v);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    /// Overwrites parameter or buffer values, e.g. queued buffer updates
    /// from a training-mode forward pass.
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor)>) {
        for (id, value) in updates {
            debug_assert_eq!(value.shape(), self.params[id.0].value.shape());
            self.params[id.0].value = value;
        }
    }

    /// SHA-256 over names and values of the parameters in `groups`
    /// (buffers included). Used to assert which networks a phase touched.
    pub fn digest(&self, groups: &[Group]) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| groups.contains(&p.group)) {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Like [`digest`](Self::digest) but over trainable parameters only.
    pub fn param_digest(&self, groups: &[Group]) -> String {
        let mut h = Sha256::new();
        for p in self
            .params
            .iter()
            .filter(|p| p.trainable() && groups.contains(&p.group))
        {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces every value from `(name, tensor)` pairs; names and shapes must
    /// match this store exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::CheckpointFormat(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, value)) in self.params.iter().zip(&values) {
            if p.name != *name || p.value.shape() != value.shape() {
                return Err(Error::CheckpointFormat(format!(
                    "tensor `{name}` {:?} does not match model parameter `{}` {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (p, (_, value)) in self.params.iter_mut().zip(values) {
            p.value = value;
        }
        Ok(())
    }
}
