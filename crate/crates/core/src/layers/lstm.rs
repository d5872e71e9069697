use rand::Rng;

use super::{Ctx, Linear, Mode};
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::{ParamId, Tensor, Var};

/// Standard LSTM cell with gates ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input = store.add(
            format!("{name}.w_input"),
            group,
            Tensor::uniform(&[inputs, 4 * hidden], -bound, bound, rng),
        );
        let w_hidden = store.add(
            format!("{name}.w_hidden"),
            group,
            Tensor::uniform(&[hidden, 4 * hidden], -bound, bound, rng),
        );
        let bias = Tensor::from_fn(&[4 * hidden], |i| {
            if (hidden..2 * hidden).contains(&i) {
                1.0
            } else {
                0.0
            }
        });
        let bias = store.add(format!("{name}.bias"), group, bias);
        LstmCell {
            w_input,
            w_hidden,
            bias,
            inputs,
            hidden,
        }
    }

    /// One step on `x: [K, inputs]` from state `(h, c)`, both `[K, hidden]`.
    pub fn step(&self, ctx: &mut Ctx, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let wx = ctx.param(self.w_input);
        let wh = ctx.param(self.w_hidden);
        let b = ctx.param(self.bias);
        let t = &mut ctx.tape;
        let zx = t.matmul(x, wx)?;
        let zh = t.matmul(h, wh)?;
        let z = t.add(zx, zh)?;
        let z = t.add(z, b)?;
        let i = t.narrow(z, 1, 0, hd)?;
        let f = t.narrow(z, 1, hd, hd)?;
        let g = t.narrow(z, 1, 2 * hd, hd)?;
        let o = t.narrow(z, 1, 3 * hd, hd)?;
        let i = t.sigmoid(i)?;
        let f = t.sigmoid(f)?;
        let g = t.tanh(g)?;
        let o = t.sigmoid(o)?;
        let keep = t.mul(f, c)?;
        let write = t.mul(i, g)?;
        let c = t.add(keep, write)?;
        let tc = t.tanh(c)?;
        let h = t.mul(o, tc)?;
        Ok((h, c))
    }
}

/// Stacked LSTM with a linear read-out to the feature space, used as a
/// next-step forecaster. Owns its parameters.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub store: ParamStore,
    pub cells: Vec<LstmCell>,
    pub head: Linear,
    pub features: usize,
    pub hidden: usize,
}

impl LstmStack {
    pub fn new<R: Rng + ?Sized>(features: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let cells = (0..layers)
            .map(|l| {
                let inputs = if l == 0 { features } else { hidden };
                LstmCell::new(&mut store, Group::Forecaster, &format!("lstm.{l}"), inputs, hidden, rng)
            })
            .collect();
        let head = Linear::new(&mut store, Group::Forecaster, "lstm.head", hidden, features, rng);
        LstmStack {
            store,
            cells,
            head,
            features,
            hidden,
        }
    }

    fn zero_state(&self, ctx: &mut Ctx, k: usize) -> Vec<(Var, Var)> {
        self.cells
            .iter()
            .map(|_| {
                let h = ctx.input(Tensor::zeros(&[k, self.hidden]));
                let c = ctx.input(Tensor::zeros(&[k, self.hidden]));
                (h, c)
            })
            .collect()
    }

    /// Feeds `x: [K, F]` through every layer; returns the next-step prediction.
    fn advance(&self, ctx: &mut Ctx, x: Var, state: &mut [(Var, Var)]) -> Result<Var> {
        let mut input = x;
        for (cell, s) in self.cells.iter().zip(state.iter_mut()) {
            *s = cell.step(ctx, input, s.0, s.1)?;
            input = s.0;
        }
        self.head.forward(ctx, input)
    }

    /// Teacher-forced next-step predictions: output step `t` predicts input
    /// step `t + 1`. `x` is `[K, T, F]`; the output has the same shape.
    pub fn predict_next(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s = ctx.tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.features || s[1] == 0 {
            return Err(Error::dim(
                "lstm",
                format!("expected [K, T>0, {}], got {s:?}", self.features),
            ));
        }
        let (k, steps) = (s[0], s[1]);
        let mut state = self.zero_state(ctx, k);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = ctx.tape.narrow(x, 1, t, 1)?;
            let xt = ctx.tape.reshape(xt, &[k, self.features])?;
            let y = self.advance(ctx, xt, &mut state)?;
            outs.push(ctx.tape.reshape(y, &[k, 1, self.features])?);
        }
        ctx.tape.concat(&outs, 1)
    }

    /// Reads `context: [K, c, F]`, then rolls out `p` steps, feeding every
    /// prediction back as the next input. Returns `[K, p, F]`.
    pub fn forecast(&self, context: &Tensor, p: usize) -> Result<Tensor> {
        let s = context.shape();
        if s.len() != 3 || s[2] != self.features {
            return Err(Error::dim(
                "lstm_forecast",
                format!("expected [K, c, {}], got {s:?}", self.features),
            ));
        }
        if s[1] == 0 {
            return Err(Error::contract("forecast needs a context of at least one step"));
        }
        let (k, c) = (s[0], s[1]);
        let mut ctx = Ctx::new(&self.store, Mode::Eval);
        let x = ctx.input(context.clone());
        let mut state = self.zero_state(&mut ctx, k);
        let mut pred = None;
        for t in 0..c {
            let xt = ctx.tape.narrow(x, 1, t, 1)?;
            let xt = ctx.tape.reshape(xt, &[k, self.features])?;
            pred = Some(self.advance(&mut ctx, xt, &mut state)?);
        }
        let mut out = Vec::with_capacity(p);
        let mut next = pred.expect("context is non-empty");
        for step in 0..p {
            out.push(ctx.value(next).clone());
            if step + 1 < p {
                next = self.advance(&mut ctx, next, &mut state)?;
            }
        }
        let mut data = vec![0.0; k * p * self.features];
        for (step, y) in out.iter().enumerate() {
            for r in 0..k {
                let dst = (r * p + step) * self.features;
                data[dst..dst + self.features]
                    .copy_from_slice(&y.data()[r * self.features..(r + 1) * self.features]);
            }
        }
        Tensor::new(&[k, p, self.features], data)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::layers::{input_grad_check, param_grad_check};

    #[test]
    fn zero_network_predicts_head_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lstm = LstmStack::new(2, 4, 2, &mut rng);
        let ids: Vec<ParamId> = lstm.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            lstm.store.value_mut(id).data_mut().fill(0.0);
        }
        *lstm.store.value_mut(lstm.head.bias) = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
        let ctx = Tensor::uniform(&[3, 5, 2], 0.0, 1.0, &mut rng);
        let y = lstm.forecast(&ctx, 4).unwrap();
        assert_eq!(y.shape(), &[3, 4, 2]);
        for pair in y.data().chunks(2) {
            assert_eq!(pair, &[0.3, -0.7]);
        }
    }

    #[test]
    fn one_step_forecast_is_last_teacher_forced_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = LstmStack::new(3, 5, 2, &mut rng);
        let x = Tensor::uniform(&[2, 6, 3], 0.0, 1.0, &mut rng);
        let y = lstm.forecast(&x, 1).unwrap();
        let mut ctx = Ctx::new(&lstm.store, Mode::Eval);
        let xv = ctx.input(x.clone());
        let all = lstm.predict_next(&mut ctx, xv).unwrap();
        let last = ctx.value(all).narrow(1, 5, 1).unwrap();
        assert_eq!(y, last);
    }

    #[test]
    fn empty_context_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = LstmStack::new(2, 3, 2, &mut rng);
        assert!(matches!(
            lstm.forecast(&Tensor::zeros(&[1, 0, 2]), 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn long_rollout_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = LstmStack::new(3, 8, 2, &mut rng);
        let x = Tensor::uniform(&[2, 256, 3], 0.0, 1.0, &mut rng);
        assert!(lstm.forecast(&x, 256).unwrap().all_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lstm = LstmStack::new(3, 4, 2, &mut rng);
        let x = Tensor::uniform(&[2, 5, 3], 0.0, 1.0, &mut rng);
        let loss = |ctx: &mut Ctx, xv: Var| -> Result<Var> {
            let y = lstm.predict_next(ctx, xv)?;
            let sq = ctx.tape.square(y)?;
            ctx.tape.sum_all(sq)
        };
        let r = input_grad_check(&lstm.store, loss, &x, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
        let ids: Vec<ParamId> = lstm.store.ids_in(&[Group::Forecaster]);
        let r = param_grad_check(
            &lstm.store,
            &ids,
            |ctx| {
                let xv = ctx.input(x.clone());
                loss(ctx, xv)
            },
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
    }
}
