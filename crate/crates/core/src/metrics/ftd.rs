use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frechet::{fit_moments, frechet_distance};
use crate::error::{Error, Result};
use crate::layers::{Ctx, EmbedderConfig, Mode, TransformerEmbedder};
use crate::params::Group;
use crate::tensor::Tensor;
use crate::train::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderTrainConfig {
    pub embedder: EmbedderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of windows held out for validation.
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        EmbedderTrainConfig {
            embedder: EmbedderConfig::default(),
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

impl EmbedderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        if self.batch_size == 0 {
            return Err(Error::contract("embedder batch size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::contract("embedder learning rate must be finite and ≥ 0"));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(Error::contract("validation fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Validation error before training and after every epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedderTrainLog {
    pub initial_val_mse: f64,
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
}

impl EmbedderTrainLog {
    pub fn final_val_mse(&self) -> f64 {
        self.val_mse.last().copied().unwrap_or(self.initial_val_mse)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        s.push_str(&format!("0,,{}\n", self.initial_val_mse));
        for (i, (t, v)) in self.train_mse.iter().zip(&self.val_mse).enumerate() {
            s.push_str(&format!("{},{t},{v}\n", i + 1));
        }
        s
    }
}

/// Splits `[K, τ, F]` windows into inputs `[K, τ−1, F]` and last-step
/// targets `[K, F]`.
fn regression_pairs(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::dim("embedder", format!("expected [K, τ, F], got {s:?}")));
    }
    if s[1] < 2 {
        return Err(Error::contract(format!("embedder training needs τ ≥ 2, got {}", s[1])));
    }
    let (k, tau, f) = (s[0], s[1], s[2]);
    let inputs = x.narrow(1, 0, tau - 1)?;
    let target = x.narrow(1, tau - 1, 1)?.reshape(&[k, f])?;
    Ok((inputs, target))
}

/// Mean squared next-step error of the regression head on windows `x`.
pub fn embedder_mse(embedder: &TransformerEmbedder, x: &Tensor) -> Result<f64> {
    let (inputs, target) = regression_pairs(x)?;
    let mut ctx = Ctx::new(&embedder.store, Mode::Eval);
    let xi = ctx.input(inputs);
    let y = ctx.input(target);
    let pred = embedder.predict(&mut ctx, xi)?;
    let diff = ctx.tape.sub(pred, y)?;
    let sq = ctx.tape.square(diff)?;
    let mse = ctx.tape.mean_all(sq)?;
    Ok(ctx.value(mse).item())
}

/// Trains a fresh embedder to predict the last step of each real window from
/// the steps before it. Windows are split 90/10 (by default) into training
/// and validation sets with a seeded shuffle.
pub fn train_embedder(real: &Tensor, cfg: &EmbedderTrainConfig) -> Result<(TransformerEmbedder, EmbedderTrainLog)> {
    cfg.validate()?;
    regression_pairs(real)?;
    let k = real.shape()[0];
    if k < 2 {
        return Err(Error::contract("embedder training needs at least two windows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut embedder = TransformerEmbedder::new(real.shape()[2], cfg.embedder.clone(), &mut rng)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1);

    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut shuffle);
    let n_val = ((k as f64 * cfg.val_frac).round() as usize).clamp(1, k - 1);
    let val = real.select_rows(&order[..n_val])?;
    let mut train_idx = order[n_val..].to_vec();

    let mut opt = Adam::new(cfg.lr, 0.9, 0.999, 1e-8);
    let mut log = EmbedderTrainLog {
        initial_val_mse: embedder_mse(&embedder, &val)?,
        ..Default::default()
    };
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let (inputs, target) = regression_pairs(&real.select_rows(chunk)?)?;
            let mut ctx = Ctx::new(&embedder.store, Mode::Train);
            let xi = ctx.input(inputs);
            let y = ctx.input(target);
            let pred = embedder.predict(&mut ctx, xi)?;
            let diff = ctx.tape.sub(pred, y)?;
            let sq = ctx.tape.square(diff)?;
            let loss = ctx.tape.mean_all(sq)?;
            let value = ctx.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("embedder loss is {value}"),
                });
            }
            let (grads, updates) = ctx.backward(loss)?;
            embedder.store.accumulate(&grads, &[Group::Embedder]);
            embedder.store.apply_updates(updates);
            opt.step(&mut embedder.store, &[Group::Embedder])?;
            total += value * chunk.len() as f64;
        }
        log.train_mse.push(total / train_idx.len() as f64);
        log.val_mse.push(embedder_mse(&embedder, &val)?);
    }
    embedder.trained = true;
    Ok((embedder, log))
}

/// Fréchet distance between Gaussians fitted to the embeddings of the first
/// `τ − 1` steps of `real` and `synthetic`. The larger batch is truncated to
/// the size of the smaller one.
pub fn ftd_score(real: &Tensor, synthetic: &Tensor, embedder: &TransformerEmbedder) -> Result<f64> {
    let (rs, ss) = (real.shape(), synthetic.shape());
    if rs.len() != 3 || ss.len() != 3 || rs[1..] != ss[1..] {
        return Err(Error::dim(
            "ftd_score",
            format!("batches must share [τ, F]; got {rs:?} and {ss:?}"),
        ));
    }
    let k = rs[0].min(ss[0]);
    if k < 2 {
        return Err(Error::contract("FTD needs at least two windows in each batch"));
    }
    let (real_in, _) = regression_pairs(&real.narrow(0, 0, k)?)?;
    let (syn_in, _) = regression_pairs(&synthetic.narrow(0, 0, k)?)?;
    let a = fit_moments(&embedder.embed(&real_in, false)?)?;
    let b = fit_moments(&embedder.embed(&syn_in, false)?)?;
    frechet_distance(&a, &b)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::data::{toy_generator, ToyKind};

    fn small(epochs: usize) -> EmbedderTrainConfig {
        EmbedderTrainConfig {
            embedder: EmbedderConfig {
                d_model: 8,
                heads: 2,
                blocks: 1,
                ffn_hidden: 16,
                positional: true,
            },
            epochs,
            batch_size: 16,
            lr: 3e-3,
            ..Default::default()
        }
    }

    #[test]
    fn short_windows_are_rejected() {
        let x = Tensor::zeros(&[8, 1, 2]);
        assert!(matches!(train_embedder(&x, &small(1)), Err(Error::Contract(_))));
    }

    #[test]
    fn training_is_reproducible_and_improves() {
        let data = toy_generator(ToyKind::CoupledSines, 64, 12, 2, 0.0, 3).unwrap().data;
        let (a, log) = train_embedder(&data, &small(15)).unwrap();
        let (b, _) = train_embedder(&data, &small(15)).unwrap();
        assert_eq!(a.store.digest(&[Group::Embedder]), b.store.digest(&[Group::Embedder]));
        assert!(log.final_val_mse() < log.initial_val_mse, "{log:?}");
        assert_eq!(log.to_csv().lines().count(), 17);
    }

    #[test]
    fn constant_data_is_learned() {
        let data = Tensor::full(&[40, 6, 2], 0.3);
        let mut cfg = small(60);
        cfg.lr = 1e-2;
        let (_, log) = train_embedder(&data, &cfg).unwrap();
        assert!(log.final_val_mse() < 1e-3, "{log:?}");
    }

    #[test]
    fn identical_batches_score_zero() {
        let data = toy_generator(ToyKind::CoupledSines, 40, 10, 2, 0.0, 1).unwrap().data;
        let (emb, _) = train_embedder(&data, &small(2)).unwrap();
        assert!(ftd_score(&data, &data, &emb).unwrap().abs() < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Tensor::from_fn(&[40, 10, 2], |_| rng.random::<f64>());
        assert!(ftd_score(&data, &noise, &emb).unwrap() > 0.0);
        assert!(matches!(ftd_score(&data, &Tensor::zeros(&[40, 9, 2]), &emb), Err(Error::Dimension { .. })));
        let untrained = TransformerEmbedder::new(2, small(1).embedder, &mut rng).unwrap();
        assert!(ftd_score(&data, &data, &untrained).is_err());
    }
}
