//! Trainable building blocks. Layers hold [`ParamId`] handles into a
//! [`ParamStore`] and record their forward pass on a [`Ctx`].

mod ffn;
mod gat;
mod lstm;
mod spectral;
mod transformer;

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;

pub use ffn::{BatchNorm, LayerNorm, ResidualFfn};
pub use gat::{GraphAttention, Orientation};
pub use lstm::{LstmCell, LstmStack};
pub use spectral::{spectral_norm_exact, SpectralConv1d};
pub use transformer::{positional_encoding, EmbedderConfig, EncoderBlock, TransformerEmbedder};

use crate::error::Result;
use crate::params::{Group, ParamStore};
use crate::tensor::{GradCheckReport, Gradients, ParamId, Tape, Tensor, Var};

/// Default negative slope of every LeakyReLU in the architecture.
pub const LEAKY_SLOPE: f64 = 0.2;

/// How layers treat their persistent state during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; power-iteration and running-statistic updates queued.
    Train,
    /// Batch statistics, no state updates. Used for the network held fixed
    /// during an adversarial update, and for gradient checks.
    Frozen,
    /// Running statistics, no state updates. Deterministic.
    Eval,
    /// Batch statistics, which batch norms queue as their exact running
    /// statistics; nothing else moves.
    Calibrate,
}

impl Mode {
    pub fn batch_statistics(self) -> bool {
        !matches!(self, Mode::Eval)
    }

    pub fn updates_state(self) -> bool {
        matches!(self, Mode::Train)
    }

    pub fn calibrates(self) -> bool {
        matches!(self, Mode::Calibrate)
    }
}

/// One forward pass: a fresh tape over a borrowed parameter store.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    mode: Mode,
    bound: HashMap<ParamId, Var>,
    updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            mode,
            bound: HashMap::new(),
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Switches the mode for layers recorded from here on, so one pass can
    /// train one network while another is held fixed.
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// The tape leaf for a parameter, recorded once per pass.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.tape.param(id, self.store.value(id).clone());
        self.bound.insert(id, v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Latest value of a buffer, including updates queued earlier in this pass.
    pub fn buffer(&self, id: ParamId) -> &Tensor {
        self.updates
            .iter()
            .rev()
            .find(|(i, _)| *i == id)
            .map(|(_, t)| t)
            .unwrap_or_else(|| self.store.value(id))
    }

    pub fn queue_update(&mut self, id: ParamId, value: Tensor) {
        debug_assert!(self.mode.updates_state() || self.mode.calibrates());
        self.updates.push((id, value));
    }

    pub fn backward(mut self, loss: Var) -> Result<(Gradients, Vec<(ParamId, Tensor)>)> {
        let grads = self.tape.backward(loss)?;
        Ok((grads, self.updates))
    }

    pub fn into_updates(self) -> Vec<(ParamId, Tensor)> {
        self.updates
    }
}

/// Central-difference check of the gradients of `f` with respect to the
/// parameters `ids`, all flattened into one vector, with kinks pinned as in
/// [`grad_check`](crate::tensor::grad_check). Runs in [`Mode::Frozen`] so
/// batch statistics stay differentiable and no state moves between probes.
pub fn param_grad_check<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx) -> Result<Var>,
{
    crate::tensor::gradcheck::check_eps(eps)?;
    let coords: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| (0..store.value(id).len()).map(move |i| (id, i)))
        .collect();
    let gradient = |s: &ParamStore| -> Result<Vec<f64>> {
        let mut ctx = Ctx::new(s, Mode::Frozen);
        let loss = f(&mut ctx)?;
        let (grads, _) = ctx.backward(loss)?;
        let mut by_id: HashMap<ParamId, Tensor> = HashMap::new();
        for (id, g) in grads.params() {
            match by_id.get_mut(&id) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    by_id.insert(id, g.clone());
                }
            }
        }
        Ok(coords
            .iter()
            .map(|(id, i)| by_id.get(id).map_or(0.0, |g| g.data()[*i]))
            .collect())
    };
    let probe = RefCell::new(store.clone());
    let eval = |c: usize, d: f64, pins: Option<&[bool]>| -> Result<(f64, Vec<bool>)> {
        let (id, i) = coords[c];
        let mut p = probe.borrow_mut();
        p.value_mut(id).data_mut()[i] = store.value(id).data()[i] + d;
        let out = {
            let mut ctx = Ctx::new(&p, Mode::Frozen);
            if let Some(pins) = pins {
                ctx.tape.pin_kinks(pins.to_vec());
            }
            f(&mut ctx).map(|v| (ctx.value(v).item(), ctx.tape.kink_signature()))
        };
        p.value_mut(id).data_mut()[i] = store.value(id).data()[i];
        out
    };
    crate::tensor::gradcheck::probe(coords.len(), gradient(store)?, eval, eps)
}

/// [`grad_check`](crate::tensor::grad_check) for a function of one input
/// that runs layers over `store` in [`Mode::Frozen`].
pub fn input_grad_check<F>(store: &ParamStore, f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx, Var) -> Result<Var>,
{
    crate::tensor::grad_check(
        |tape, xv| {
            let mut ctx = Ctx::new(store, Mode::Frozen);
            std::mem::swap(&mut ctx.tape, tape);
            let out = f(&mut ctx, xv);
            std::mem::swap(&mut ctx.tape, tape);
            out
        },
        x,
        eps,
    )
}

/// Affine map over the last axis: `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            group,
            Tensor::uniform(&[fan_in, fan_out], -bound, bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&[fan_out]));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let y = ctx.tape.matmul(x, w)?;
        ctx.tape.add(y, b)
    }

    /// Zeroes weight and bias.
    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).data_mut().fill(0.0);
        store.value_mut(self.bias).data_mut().fill(0.0);
    }
}
