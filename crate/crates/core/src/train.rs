//! Losses, optimizer and the two-phase adversarial-autoencoder update.
//!
//! Each [`Trainer::train_step`] runs, in order:
//! 1. reconstruction: encoder and decoder minimize `L_r`;
//! 2. discriminator: prior samples against detached encoder latents, with
//!    minibatch-level label flipping;
//! 3. generator: the encoder minimizes `−log D(posterior) + λ_r·L_r` with
//!    the discriminator and decoder held fixed.
//!
//! The adversarial terms use the non-saturating form. The generator loss is
//! `−mean ln D(z_post)` and the discriminator loss is
//! `−mean ln D(z_prior) − mean ln(1 − D(z_post))`.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Ctx, Mode};
use crate::model::{inject_noise, GatGanModel, Variant};
use crate::params::{Group, ParamStore};
use crate::tensor::{ParamId, Reduction, Tape, Tensor, Var};

/// Floor inside every logarithm of a score.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Encoder step size in the reconstruction phase.
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    /// Encoder step size in the adversarial phase.
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Probability ρ_p of swapping real/fake roles in a discriminator update.
    pub flip_prob: f64,
    /// Weight λ_r of the reconstruction term in the generator loss.
    pub lambda_r: f64,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 16,
            epochs: 200,
            lr_encoder: 2e-3,
            lr_decoder: 2e-3,
            lr_generator: 2e-4,
            lr_discriminator: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            flip_prob: 0.05,
            lambda_r: 1.0,
            seed: 0,
            log_every: 10,
            checkpoint_every: 50,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::contract(format!("{name} = {lr} must be a finite value ≥ 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::contract(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::contract("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::contract("adam_eps must be positive"));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return Err(Error::contract("lambda_r must be a finite value ≥ 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch averages over minibatches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub l_r: f64,
    pub l_gen: f64,
    pub l_disc: f64,
    /// Fraction of prior scores above 0.5 and posterior scores below 0.5.
    pub disc_accuracy: f64,
    pub seconds: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "epoch,L_r,L_gen,L_disc,disc_accuracy,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.l_r, self.l_gen, self.l_disc, self.disc_accuracy, self.seconds
        )
    }
}

/// `mean_k ‖x_k − x̄_k‖₂` over sequences `k`.
pub fn reconstruction_loss(tape: &mut Tape, x: Var, xbar: Var) -> Result<Var> {
    let (sx, sb) = (tape.shape(x).to_vec(), tape.shape(xbar).to_vec());
    if sx != sb || sx.is_empty() {
        return Err(Error::dim("reconstruction_loss", format!("{sx:?} vs {sb:?}")));
    }
    let k = sx[0];
    let rest: usize = sx[1..].iter().product();
    let d = tape.sub(xbar, x)?;
    let d = tape.reshape(d, &[k, rest])?;
    let sq = tape.square(d)?;
    let per = tape.reduce(sq, Reduction::Sum, &[1], false)?;
    // Clamping keeps the gradient finite where a sequence is reproduced exactly.
    let per = tape.clamp_min(per, 1e-24)?;
    let norms = tape.sqrt(per)?;
    tape.mean_all(norms)
}

fn mean_log(tape: &mut Tape, s: Var) -> Result<Var> {
    let s = tape.clamp_min(s, LOG_FLOOR)?;
    let l = tape.ln(s)?;
    tape.mean_all(l)
}

/// `−mean ln D(z_post) + λ_r·L_r`.
pub fn generator_loss(tape: &mut Tape, posterior_scores: Var, l_r: Var, lambda_r: f64) -> Result<Var> {
    let adv = mean_log(tape, posterior_scores)?;
    let adv = tape.scale(adv, -1.0)?;
    if lambda_r == 0.0 {
        return Ok(adv);
    }
    let rec = tape.scale(l_r, lambda_r)?;
    tape.add(adv, rec)
}

/// `−mean ln D(z_prior) − mean ln(1 − D(z_post))`.
pub fn discriminator_loss(tape: &mut Tape, prior_scores: Var, posterior_scores: Var) -> Result<Var> {
    let real = mean_log(tape, prior_scores)?;
    let neg = tape.scale(posterior_scores, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let fake = mean_log(tape, one_minus)?;
    let total = tape.add(real, fake)?;
    tape.scale(total, -1.0)
}

/// Whether this minibatch's discriminator update swaps the real/fake roles.
pub fn flip_labels<R: Rng + ?Sized>(flip_prob: f64, rng: &mut R) -> bool {
    flip_prob > 0.0 && rng.random::<f64>() < flip_prob
}

/// Adam moments for one network.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: HashMap<ParamId, Tensor>,
    pub v: HashMap<ParamId, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            ..Default::default()
        }
    }

    /// One bias-corrected update of the trainable parameters in `groups`
    /// from their accumulated gradients, which are then zeroed. A non-finite
    /// gradient aborts before any parameter moves.
    pub fn step(&mut self, store: &mut ParamStore, groups: &[Group]) -> Result<()> {
        let ids = store.ids_in(groups);
        for &id in &ids {
            let p = store.get(id);
            if !p.grad.as_ref().is_some_and(|g| g.all_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in ids {
            let g = store.get(id).grad.clone().expect("trainable");
            let m = self.m.entry(id).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(id).or_insert_with(|| Tensor::zeros(g.shape()));
            let value = store.value_mut(id);
            for (((w, gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                if self.lr != 0.0 {
                    *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                }
            }
        }
        for id in store.ids_in(groups) {
            if let Some(g) = store.grad_mut(id) {
                g.data_mut().fill(0.0);
            }
        }
        Ok(())
    }
}

/// Losses of one minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub l_r: f64,
    pub l_gen: f64,
    pub l_disc: f64,
    pub disc_accuracy: f64,
    pub flipped: bool,
}

/// Optimizer state and the per-purpose random streams of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainingConfig,
    pub encoder_opt: Adam,
    pub decoder_opt: Adam,
    /// Separate moment estimates for the encoder's adversarial updates.
    pub generator_opt: Adam,
    pub discriminator_opt: Adam,
    pub shuffle_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub flip_rng: ChaCha8Rng,
    pub prior_rng: ChaCha8Rng,
}

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

impl Trainer {
    pub fn new(cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = |lr| Adam::new(lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
        Ok(Trainer {
            encoder_opt: adam(cfg.lr_encoder),
            decoder_opt: adam(cfg.lr_decoder),
            generator_opt: adam(cfg.lr_generator),
            discriminator_opt: adam(cfg.lr_discriminator),
            shuffle_rng: stream(cfg.seed, 1),
            noise_rng: stream(cfg.seed, 2),
            flip_rng: stream(cfg.seed, 3),
            prior_rng: stream(cfg.seed, 4),
            cfg,
        })
    }

    fn lambda_r(&self, model: &GatGanModel) -> f64 {
        if model.config.variant == Variant::NoReconstructionLoss {
            0.0
        } else {
            self.cfg.lambda_r
        }
    }

    /// Phase 1: encoder and decoder minimize `L_r` on a noisy copy of `batch`.
    pub fn reconstruction_phase(&mut self, model: &mut GatGanModel, batch: &Tensor) -> Result<f64> {
        let noisy = inject_noise(batch, model.config.noise_std, &mut self.noise_rng)?;
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let x = ctx.input(batch.clone());
        let xn = ctx.input(noisy);
        let z = model.encode_var(&mut ctx, xn)?;
        let xbar = model.decode_var(&mut ctx, z)?;
        let loss = reconstruction_loss(&mut ctx.tape, x, xbar)?;
        let value = ctx.value(loss).item();
        let (grads, updates) = ctx.backward(loss)?;
        finite(value, "reconstruction loss")?;
        model.store.accumulate(&grads, &[Group::Encoder, Group::Decoder]);
        model.store.apply_updates(updates);
        self.encoder_opt.step(&mut model.store, &[Group::Encoder])?;
        self.decoder_opt.step(&mut model.store, &[Group::Decoder])?;
        Ok(value)
    }

    /// Phase 2: one discriminator update, then one adversarial encoder
    /// update. Returns `(L_disc, L_gen, L_r, accuracy, flipped)`.
    pub fn adversarial_phase(&mut self, model: &mut GatGanModel, batch: &Tensor) -> Result<StepLosses> {
        let k = batch.shape()[0];
        let lambda_r = self.lambda_r(model);
        let noisy = inject_noise(batch, model.config.noise_std, &mut self.noise_rng)?;
        let prior = model.sample_prior(k, &mut self.prior_rng)?;
        let flipped = flip_labels(self.cfg.flip_prob, &mut self.flip_rng);

        // Discriminator on [prior; posterior] in one batch so both halves
        // share normalization statistics.
        let posterior = model.encode(&noisy, Mode::Frozen)?;
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let both = ctx.input(Tensor::stack(&[prior.clone(), posterior])?.reshape(&[
            2 * k,
            model.config.tau,
            model.config.latent,
        ])?);
        let scores = model.discriminate_var(&mut ctx, both)?;
        let s_prior = ctx.tape.narrow(scores, 0, 0, k)?;
        let s_post = ctx.tape.narrow(scores, 0, k, k)?;
        let loss = if flipped {
            discriminator_loss(&mut ctx.tape, s_post, s_prior)?
        } else {
            discriminator_loss(&mut ctx.tape, s_prior, s_post)?
        };
        let l_disc = ctx.value(loss).item();
        let sv = ctx.value(scores).data().to_vec();
        let correct = sv[..k].iter().filter(|s| **s > 0.5).count() + sv[k..].iter().filter(|s| **s < 0.5).count();
        let (grads, updates) = ctx.backward(loss)?;
        finite(l_disc, "discriminator loss")?;
        model.store.accumulate(&grads, &[Group::Discriminator]);
        model.store.apply_updates(updates);
        self.discriminator_opt.step(&mut model.store, &[Group::Discriminator])?;

        // Encoder against the fixed discriminator and decoder.
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let x = ctx.input(batch.clone());
        let xn = ctx.input(noisy);
        let z = model.encode_var(&mut ctx, xn)?;
        ctx.set_mode(Mode::Frozen);
        let p = ctx.input(prior);
        let both = ctx.tape.concat(&[p, z], 0)?;
        let scores = model.discriminate_var(&mut ctx, both)?;
        let s_post = ctx.tape.narrow(scores, 0, k, k)?;
        let xbar = model.decode_var(&mut ctx, z)?;
        let l_r = reconstruction_loss(&mut ctx.tape, x, xbar)?;
        let loss = generator_loss(&mut ctx.tape, s_post, l_r, lambda_r)?;
        let (l_gen, l_r_value) = (ctx.value(loss).item(), ctx.value(l_r).item());
        let (grads, updates) = ctx.backward(loss)?;
        finite(l_gen, "generator loss")?;
        model.store.accumulate(&grads, &[Group::Encoder]);
        model.store.apply_updates(updates);
        self.generator_opt.step(&mut model.store, &[Group::Encoder])?;

        Ok(StepLosses {
            l_r: l_r_value,
            l_gen,
            l_disc,
            disc_accuracy: correct as f64 / (2 * k) as f64,
            flipped,
        })
    }

    /// Both phases on one minibatch. The reconstruction phase is skipped
    /// when the reconstruction weight is zero.
    pub fn train_step(&mut self, model: &mut GatGanModel, batch: &Tensor) -> Result<StepLosses> {
        model.check_series(batch.shape())?;
        let rec = if self.lambda_r(model) > 0.0 {
            Some(self.reconstruction_phase(model, batch)?)
        } else {
            None
        };
        let mut out = self.adversarial_phase(model, batch)?;
        if let Some(l) = rec {
            out.l_r = l;
        }
        Ok(out)
    }

    /// One pass over `data` in shuffled minibatches, then batch-norm
    /// calibration on all of `data`.
    pub fn train_epoch(&mut self, model: &mut GatGanModel, data: &Tensor) -> Result<LossRecord> {
        let start = Instant::now();
        let k = data.shape()[0];
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut sums = [0.0; 4];
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = data.select_rows(chunk)?;
            let s = self.train_step(model, &batch)?;
            for (acc, v) in sums.iter_mut().zip([s.l_r, s.l_gen, s.l_disc, s.disc_accuracy]) {
                *acc += v;
            }
            batches += 1;
        }
        model.calibrate_batch_norm(data)?;
        model.epochs_trained += 1;
        let n = batches as f64;
        Ok(LossRecord {
            epoch: model.epochs_trained,
            l_r: sums[0] / n,
            l_gen: sums[1] / n,
            l_disc: sums[2] / n,
            disc_accuracy: sums[3] / n,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch: 0,
            detail: format!("{what} is {v}"),
        })
    }
}

/// Trains over `data: [K, τ, F]` until the model has seen
/// `trainer.cfg.epochs` epochs in total (so a resumed model only runs the
/// remainder), calling
/// `on_epoch` after each one (checkpointing, logging). A non-finite loss or
/// gradient aborts with [`Error::Diverged`].
pub fn train_loop(
    model: &mut GatGanModel,
    data: &Tensor,
    trainer: &mut Trainer,
    mut on_epoch: impl FnMut(&GatGanModel, &Trainer, &LossRecord) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    if data.rank() != 3 || data.shape()[0] == 0 {
        return Err(Error::contract("training needs a non-empty [K, τ, F] dataset"));
    }
    model.check_series(data.shape())?;
    let remaining = trainer.cfg.epochs.saturating_sub(model.epochs_trained);
    let mut records = Vec::with_capacity(remaining);
    for _ in 0..remaining {
        let epoch = model.epochs_trained + 1;
        let rec = trainer.train_epoch(model, data).map_err(|e| match e {
            Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
            Error::NonFiniteGradient(p) => Error::Diverged {
                epoch,
                detail: format!("non-finite gradient in `{p}`"),
            },
            other => other,
        })?;
        on_epoch(model, trainer, &rec)?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn eval(f: impl Fn(&mut Tape) -> Result<Var>) -> f64 {
        let mut t = Tape::new();
        let v = f(&mut t).unwrap();
        t.value(v).item()
    }

    fn vec1(t: &mut Tape, v: &[f64]) -> Var {
        t.constant(Tensor::new(&[v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn reconstruction_loss_values() {
        let x = Tensor::from_fn(&[1, 4, 3], |i| i as f64 / 12.0);
        assert_eq!(
            eval(|t| {
                let a = t.constant(x.clone());
                let b = t.constant(x.clone());
                reconstruction_loss(t, a, b)
            }),
            1e-12
        );
        let off = eval(|t| {
            let a = t.constant(x.clone());
            let b = t.constant(x.map(|v| v + 0.1));
            reconstruction_loss(t, a, b)
        });
        assert!((off - 0.1 * 12f64.sqrt()).abs() < 1e-12);
        assert!((off - 0.3464).abs() < 1e-4);
    }

    #[test]
    fn reconstruction_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[3, 4, 2], 0.0, 1.0, &mut rng);
        let xb = Tensor::uniform(&[3, 4, 2], 0.0, 1.0, &mut rng);
        let r = crate::tensor::grad_check(
            |t, v| {
                let a = t.constant(x.clone());
                reconstruction_loss(t, a, v)
            },
            &xb,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{}", r.max_rel_err);
    }

    #[test]
    fn generator_loss_values() {
        let g = eval(|t| {
            let s = vec1(t, &[1.0, 1.0]);
            let l = t.constant(Tensor::scalar(0.0));
            generator_loss(t, s, l, 1.0)
        });
        assert_eq!(g, 0.0);
        let g = eval(|t| {
            let s = vec1(t, &[0.5, 0.5, 0.5]);
            let l = t.constant(Tensor::scalar(0.3));
            generator_loss(t, s, l, 1.0)
        });
        assert!((g - (2f64.ln() + 0.3)).abs() < 1e-15);
        assert!((g - 0.9931).abs() < 1e-4);
        let zero = eval(|t| {
            let s = vec1(t, &[0.0]);
            let l = t.constant(Tensor::scalar(0.0));
            generator_loss(t, s, l, 1.0)
        });
        assert!(zero.is_finite());
    }

    #[test]
    fn discriminator_loss_values() {
        let d = eval(|t| {
            let p = vec1(t, &[0.5, 0.5]);
            let q = vec1(t, &[0.5, 0.5]);
            discriminator_loss(t, p, q)
        });
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-15);
        let perfect = eval(|t| {
            let p = vec1(t, &[1.0 - 1e-15]);
            let q = vec1(t, &[1e-15]);
            discriminator_loss(t, p, q)
        });
        assert!(perfect.abs() < 1e-12);
        let edge = eval(|t| {
            let p = vec1(t, &[0.0]);
            let q = vec1(t, &[1.0]);
            discriminator_loss(t, p, q)
        });
        assert!(edge.is_finite());
        // Exchanging the batches with the role swap: L(P, Q) = L(1 − Q, 1 − P).
        let a = eval(|t| {
            let p = vec1(t, &[0.7, 0.2]);
            let q = vec1(t, &[0.4, 0.9]);
            discriminator_loss(t, p, q)
        });
        let b = eval(|t| {
            let p = vec1(t, &[0.6, 0.1]);
            let q = vec1(t, &[0.3, 0.8]);
            discriminator_loss(t, p, q)
        });
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn flip_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| !flip_labels(0.0, &mut rng)));
        assert!((0..1000).all(|_| flip_labels(1.0, &mut rng)));
        let n = (0..10_000).filter(|_| flip_labels(0.05, &mut rng)).count();
        // Within two percentage points of ρ_p.
        assert!((n as f64 / 10_000.0 - 0.05).abs() < 0.02, "{n}");
    }

    #[test]
    fn adam_two_step_trajectory() {
        // w0 = 1, grads 0.5 then -0.2, lr 0.1.
        let mut store = ParamStore::new();
        let id = store.add("w", Group::Encoder, Tensor::scalar(1.0));
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        let mut w = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in [0.5, -0.2].into_iter().enumerate() {
            *store.grad_mut(id).unwrap() = Tensor::scalar(g);
            opt.step(&mut store, &[Group::Encoder]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((store.value(id).item() - w).abs() < 1e-15);
            assert_eq!(store.get(id).grad.as_ref().unwrap().item(), 0.0);
        }
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("bad", Group::Encoder, Tensor::scalar(1.0));
        *store.grad_mut(id).unwrap() = Tensor::scalar(f64::NAN);
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        match opt.step(&mut store, &[Group::Encoder]) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "bad"),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.value(id).item(), 1.0);
    }

    fn tiny_model() -> GatGanModel {
        GatGanModel::new(ModelConfig {
            latent: 4,
            attention_pairs: 1,
            ffn_layers: 1,
            ..ModelConfig::new(8, 3)
        })
        .unwrap()
    }

    fn toy(k: usize) -> Tensor {
        Tensor::from_fn(&[k, 8, 3], |i| {
            let (s, r) = (i / 24, i % 24);
            let (t, f) = (r / 3, r % 3);
            0.5 + 0.4 * ((t + s) as f64 * 0.7 + f as f64).sin()
        })
    }

    const ALL: [Group; 3] = [Group::Encoder, Group::Decoder, Group::Discriminator];

    #[test]
    fn zero_learning_rates_leave_parameters_unchanged() {
        let mut model = tiny_model();
        let before = model.store.param_digest(&ALL);
        let cfg = TrainingConfig {
            lr_encoder: 0.0,
            lr_decoder: 0.0,
            lr_generator: 0.0,
            lr_discriminator: 0.0,
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let mut trainer = Trainer::new(cfg).unwrap();
        let recs = train_loop(&mut model, &toy(8), &mut trainer, |_, _, _| Ok(())).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.l_r.is_finite() && r.l_gen.is_finite()));
        assert_eq!(model.store.param_digest(&ALL), before);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut model = tiny_model();
        let before = model.store.digest(&ALL);
        let mut trainer = Trainer::new(TrainingConfig {
            epochs: 0,
            ..Default::default()
        })
        .unwrap();
        let recs = train_loop(&mut model, &toy(4), &mut trainer, |_, _, _| Ok(())).unwrap();
        assert!(recs.is_empty());
        assert_eq!(model.store.digest(&ALL), before);
        assert!(train_loop(&mut model, &Tensor::zeros(&[0, 8, 3]), &mut trainer, |_, _, _| Ok(())).is_err());
    }

    #[test]
    fn phases_touch_only_their_networks() {
        let mut model = tiny_model();
        let mut trainer = Trainer::new(TrainingConfig::default()).unwrap();
        let batch = toy(4);
        let disc = model.store.digest(&[Group::Discriminator]);
        let enc = model.store.digest(&[Group::Encoder]);
        let dec = model.store.digest(&[Group::Decoder]);
        trainer.reconstruction_phase(&mut model, &batch).unwrap();
        assert_eq!(model.store.digest(&[Group::Discriminator]), disc);
        assert_ne!(model.store.digest(&[Group::Encoder]), enc);
        assert_ne!(model.store.digest(&[Group::Decoder]), dec);

        let dec = model.store.digest(&[Group::Decoder]);
        let disc = model.store.digest(&[Group::Discriminator]);
        trainer.adversarial_phase(&mut model, &batch).unwrap();
        assert_eq!(model.store.digest(&[Group::Decoder]), dec);
        assert_ne!(model.store.digest(&[Group::Discriminator]), disc);
    }

    #[test]
    fn training_replays_bit_identically() {
        let run = || {
            let mut model = tiny_model();
            let mut trainer = Trainer::new(TrainingConfig {
                epochs: 3,
                batch_size: 4,
                seed: 5,
                ..Default::default()
            })
            .unwrap();
            let recs = train_loop(&mut model, &toy(8), &mut trainer, |_, _, _| Ok(())).unwrap();
            let losses: Vec<[f64; 4]> = recs.iter().map(|r| [r.l_r, r.l_gen, r.l_disc, r.disc_accuracy]).collect();
            (losses, model.store.digest(&ALL))
        };
        assert_eq!(run(), run());
    }
}
