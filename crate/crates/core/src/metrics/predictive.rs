use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Ctx, LstmStack, Mode};
use crate::params::Group;
use crate::tensor::Tensor;
use crate::train::Adam;

/// Prediction window of the predictive score.
pub const DEFAULT_HORIZON: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Steps forecast from a context of `τ − horizon`.
    pub horizon: usize,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            hidden: 64,
            layers: 2,
            epochs: 300,
            lr: 1e-3,
            batch_size: 64,
            horizon: DEFAULT_HORIZON,
            seed: 0,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 || self.horizon == 0 {
            return Err(Error::contract(
                "forecaster hidden size, layers, batch size and horizon must be positive",
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::contract("forecaster learning rate must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// Mean absolute error per element.
pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(
            "mae",
            format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::contract("MAE of an empty batch"));
    }
    let total: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / pred.len() as f64)
}

/// Rows of `x` in lexicographic order of their contents, so training does
/// not depend on how the caller ordered the windows.
fn canonical_order(x: &Tensor) -> Result<Tensor> {
    let k = x.shape()[0];
    let row = x.len() / k.max(1);
    let mut idx: Vec<usize> = (0..k).collect();
    let d = x.data();
    idx.sort_by(|&a, &b| {
        d[a * row..(a + 1) * row]
            .iter()
            .zip(&d[b * row..(b + 1) * row])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    x.select_rows(&idx)
}

fn check_windows(x: &Tensor, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[0] == 0 || s[1] < 2 {
        return Err(Error::dim("forecaster", format!("{what}: expected [K>0, τ≥2, F], got {s:?}")));
    }
    Ok(())
}

/// Fits an LSTM stack to teacher-forced next-step prediction on `train`.
pub fn train_forecaster(train: &Tensor, cfg: &ForecasterConfig) -> Result<LstmStack> {
    cfg.validate()?;
    check_windows(train, "training windows")?;
    let train = canonical_order(train)?;
    let (k, tau, f) = (train.shape()[0], train.shape()[1], train.shape()[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stack = LstmStack::new(f, cfg.hidden, cfg.layers, &mut rng);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1);
    let mut opt = Adam::new(cfg.lr, 0.9, 0.999, 1e-8);
    let mut order: Vec<usize> = (0..k).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select_rows(chunk)?;
            let mut ctx = Ctx::new(&stack.store, Mode::Train);
            let input = ctx.input(batch.narrow(1, 0, tau - 1)?);
            let target = ctx.input(batch.narrow(1, 1, tau - 1)?);
            let pred = stack.predict_next(&mut ctx, input)?;
            let diff = ctx.tape.sub(pred, target)?;
            let sq = ctx.tape.square(diff)?;
            let loss = ctx.tape.mean_all(sq)?;
            let value = ctx.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("forecaster loss is {value}"),
                });
            }
            let (grads, _) = ctx.backward(loss)?;
            stack.store.accumulate(&grads, &[Group::Forecaster]);
            opt.step(&mut stack.store, &[Group::Forecaster])?;
        }
    }
    Ok(stack)
}

/// MAE of `stack` forecasting the last `horizon` steps of each test window
/// from the steps before them.
pub fn forecast_mae(stack: &LstmStack, test: &Tensor, horizon: usize) -> Result<f64> {
    check_windows(test, "test windows")?;
    let tau = test.shape()[1];
    if tau <= horizon {
        return Err(Error::contract(format!(
            "sequence length {tau} must exceed the prediction window {horizon}"
        )));
    }
    let context = test.narrow(1, 0, tau - horizon)?;
    let truth = test.narrow(1, tau - horizon, horizon)?;
    mae(&stack.forecast(&context, horizon)?, &truth)
}

/// Train on synthetic, test on real: an LSTM forecaster fitted to
/// `synthetic_train` is scored by its MAE on `real_test`.
pub fn predictive_score(real_test: &Tensor, synthetic_train: &Tensor, cfg: &ForecasterConfig) -> Result<f64> {
    check_windows(real_test, "real test windows")?;
    check_windows(synthetic_train, "synthetic windows")?;
    if real_test.shape()[1..] != synthetic_train.shape()[1..] {
        return Err(Error::dim(
            "predictive_score",
            format!("{:?} vs {:?}", real_test.shape(), synthetic_train.shape()),
        ));
    }
    if real_test.shape()[1] <= cfg.horizon {
        return Err(Error::contract(format!(
            "sequence length {} must exceed the prediction window {}",
            real_test.shape()[1],
            cfg.horizon
        )));
    }
    let stack = train_forecaster(synthetic_train, cfg)?;
    forecast_mae(&stack, real_test, cfg.horizon)
}
