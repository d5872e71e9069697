use rand::Rng;

use super::{Ctx, Linear, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::{ParamId, Reduction, Tensor, Var};

/// Per-feature normalization over every leading axis of the input.
///
/// Training passes use batch statistics and queue
/// `running = momentum·running + (1 − momentum)·batch`; eval passes use the
/// running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub features: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, group: Group, name: &str, features: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), group, Tensor::ones(&[features])),
            beta: store.add(format!("{name}.beta"), group, Tensor::zeros(&[features])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), group, Tensor::zeros(&[features])),
            running_var: store.add_buffer(format!("{name}.running_var"), group, Tensor::ones(&[features])),
            features,
            eps: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.last() != Some(&self.features) {
            return Err(Error::dim(
                "batch_norm",
                format!("expected last axis {}, got {shape:?}", self.features),
            ));
        }
        let axes: Vec<usize> = (0..shape.len() - 1).collect();
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);

        let (centered, var) = if ctx.mode().batch_statistics() {
            let t = &mut ctx.tape;
            let mean = t.reduce(x, Reduction::Mean, &axes, false)?;
            let centered = t.sub(x, mean)?;
            let sq = t.square(centered)?;
            let var = t.reduce(sq, Reduction::Mean, &axes, false)?;
            if ctx.mode().updates_state() {
                let m = self.momentum;
                let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
                let bm = ctx.value(mean).clone();
                let bv = ctx.value(var).clone();
                let rm = ctx.buffer(self.running_mean).clone();
                let rv = ctx.buffer(self.running_var).clone();
                let nm = Tensor::from_fn(&[self.features], |i| m * rm.data()[i] + (1.0 - m) * bm.data()[i]);
                let nv = Tensor::from_fn(&[self.features], |i| {
                    m * rv.data()[i] + (1.0 - m) * bv.data()[i] * unbias
                });
                ctx.queue_update(self.running_mean, nm);
                ctx.queue_update(self.running_var, nv);
            } else if ctx.mode().calibrates() {
                let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
                let bm = ctx.value(mean).clone();
                let bv = ctx.value(var).map(|v| v * unbias);
                ctx.queue_update(self.running_mean, bm);
                ctx.queue_update(self.running_var, bv);
            }
            (centered, var)
        } else {
            let rm = ctx.buffer(self.running_mean).clone();
            let rv = ctx.buffer(self.running_var).clone();
            let t = &mut ctx.tape;
            let mean = t.constant(rm);
            let var = t.constant(rv);
            (t.sub(x, mean)?, var)
        };
        let t = &mut ctx.tape;
        let var = t.add_scalar(var, self.eps)?;
        let std = t.sqrt(var)?;
        let y = t.div(centered, std)?;
        let y = t.mul(y, gamma)?;
        t.add(y, beta)
    }
}

/// Normalization over the last axis of each row, with learned scale and
/// shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub features: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, group: Group, name: &str, features: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), group, Tensor::ones(&[features])),
            beta: store.add(format!("{name}.beta"), group, Tensor::zeros(&[features])),
            features,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let d = self.features;
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let t = &mut ctx.tape;
        // Multiplying by J = 11ᵀ/d averages each row and broadcasts it back.
        let avg = t.constant(Tensor::full(&[d, d], 1.0 / d as f64));
        let mean = t.matmul(x, avg)?;
        let centered = t.sub(x, mean)?;
        let sq = t.square(centered)?;
        let var = t.matmul(sq, avg)?;
        let var = t.add_scalar(var, self.eps)?;
        let std = t.sqrt(var)?;
        let y = t.div(centered, std)?;
        let y = t.mul(y, gamma)?;
        t.add(y, beta)
    }
}

/// `z + stack(z)`, where `stack` is `depth` rounds of
/// affine → LeakyReLU → batch norm at constant width.
#[derive(Clone, Debug)]
pub struct ResidualFfn {
    pub layers: Vec<(Linear, BatchNorm)>,
    pub width: usize,
    pub slope: f64,
}

impl ResidualFfn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| {
                (
                    Linear::new(store, group, &format!("{name}.{i}.linear"), width, width, rng),
                    BatchNorm::new(store, group, &format!("{name}.{i}.bn"), width),
                )
            })
            .collect();
        ResidualFfn {
            layers,
            width,
            slope: LEAKY_SLOPE,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        let shape = ctx.tape.shape(z);
        if shape.last() != Some(&self.width) {
            return Err(Error::dim(
                "residual_ffn",
                format!("expected last axis {}, got {shape:?}", self.width),
            ));
        }
        let mut h = z;
        for (linear, bn) in &self.layers {
            h = linear.forward(ctx, h)?;
            h = ctx.tape.leaky_relu(h, self.slope)?;
            h = bn.forward(ctx, h)?;
        }
        ctx.tape.add(z, h)
    }
}
