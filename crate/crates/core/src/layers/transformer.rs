use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Ctx, LayerNorm, Linear, Mode, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::{Reduction, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// Embedding width `d_e`.
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    pub positional: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            d_model: 32,
            heads: 4,
            blocks: 2,
            ffn_hidden: 64,
            positional: true,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::contract(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::contract("ffn_hidden must be positive"));
        }
        Ok(())
    }
}

/// Sinusoidal position table `[len, d]`: even columns `sin(t/10000^{2i/d})`,
/// odd columns the matching cosine.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[len, d], |idx| {
        let (t, c) = (idx / d, idx % d);
        let freq = 10000f64.powf(-((c / 2 * 2) as f64) / d as f64);
        let a = t as f64 * freq;
        if c % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Post-norm encoder block: multi-head self-attention and a two-layer
/// feed-forward, each wrapped in a residual connection and layer norm.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub heads: usize,
    pub d_model: usize,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        cfg: &EmbedderConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d_model;
        EncoderBlock {
            query: Linear::new(store, group, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, group, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, group, &format!("{name}.value"), d, d, rng),
            out: Linear::new(store, group, &format!("{name}.out"), d, d, rng),
            norm1: LayerNorm::new(store, group, &format!("{name}.norm1"), d),
            ff1: Linear::new(store, group, &format!("{name}.ff1"), d, cfg.ffn_hidden, rng),
            ff2: Linear::new(store, group, &format!("{name}.ff2"), cfg.ffn_hidden, d, rng),
            norm2: LayerNorm::new(store, group, &format!("{name}.norm2"), d),
            heads: cfg.heads,
            d_model: d,
        }
    }

    /// `[K, T, d]` → `[K·H, T, d/H]`.
    fn split_heads(&self, ctx: &mut Ctx, x: Var, k: usize, steps: usize) -> Result<Var> {
        let (h, dh) = (self.heads, self.d_model / self.heads);
        let t = &mut ctx.tape;
        let x = t.reshape(x, &[k, steps, h, dh])?;
        let x = t.permute(x, &[0, 2, 1, 3])?;
        t.reshape(x, &[k * h, steps, dh])
    }

    /// Returns the block output and the attention weights `[K·H, T, T]`.
    pub fn forward_with_attention(&self, ctx: &mut Ctx, x: Var) -> Result<(Var, Var)> {
        let s = ctx.tape.shape(x).to_vec();
        let (k, steps, d) = (s[0], s[1], self.d_model);
        let dh = d / self.heads;
        let q = self.query.forward(ctx, x)?;
        let kk = self.key.forward(ctx, x)?;
        let v = self.value.forward(ctx, x)?;
        let q = self.split_heads(ctx, q, k, steps)?;
        let kk = self.split_heads(ctx, kk, k, steps)?;
        let v = self.split_heads(ctx, v, k, steps)?;
        let t = &mut ctx.tape;
        let kt = t.transpose_last(kk)?;
        let logits = t.matmul(q, kt)?;
        let logits = t.scale(logits, 1.0 / (dh as f64).sqrt())?;
        let attn = t.softmax_last(logits)?;
        let mixed = t.matmul(attn, v)?;
        let mixed = t.reshape(mixed, &[k, self.heads, steps, dh])?;
        let mixed = t.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = t.reshape(mixed, &[k, steps, d])?;
        let a = self.out.forward(ctx, mixed)?;
        let h = ctx.tape.add(x, a)?;
        let h = self.norm1.forward(ctx, h)?;
        let f = self.ff1.forward(ctx, h)?;
        let f = ctx.tape.leaky_relu(f, LEAKY_SLOPE)?;
        let f = self.ff2.forward(ctx, f)?;
        let y = ctx.tape.add(h, f)?;
        let y = self.norm2.forward(ctx, y)?;
        Ok((y, attn))
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(ctx, x)?.0)
    }
}

/// Sequence encoder whose mean-pooled output is the embedding used by the
/// Frechet transformer distance. The regression head predicts the step after
/// the input window and is only used for training. Owns its parameters.
#[derive(Clone, Debug)]
pub struct TransformerEmbedder {
    pub config: EmbedderConfig,
    pub features: usize,
    pub store: ParamStore,
    pub input: Linear,
    pub blocks: Vec<EncoderBlock>,
    pub head: Linear,
    /// Set once the embedder has been fitted to data.
    pub trained: bool,
}

impl TransformerEmbedder {
    /// Rows per forward pass in [`embed`](Self::embed).
    const CHUNK: usize = 256;

    pub fn new<R: Rng + ?Sized>(features: usize, config: EmbedderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if features == 0 {
            return Err(Error::contract("embedder needs at least one feature"));
        }
        let mut store = ParamStore::new();
        let g = Group::Embedder;
        let d = config.d_model;
        let input = Linear::new(&mut store, g, "embedder.input", features, d, rng);
        let blocks = (0..config.blocks)
            .map(|b| EncoderBlock::new(&mut store, g, &format!("embedder.block{b}"), &config, rng))
            .collect();
        let head = Linear::new(&mut store, g, "embedder.head", d, features, rng);
        Ok(TransformerEmbedder {
            config,
            features,
            store,
            input,
            blocks,
            head,
            trained: false,
        })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[2] != self.features {
            return Err(Error::dim(
                "embed",
                format!("expected [K, T, {}], got {shape:?}", self.features),
            ));
        }
        if shape[1] < 1 {
            return Err(Error::contract("embedding needs at least one time step"));
        }
        Ok(())
    }

    /// Pooled embedding `[K, d_e]` of `x: [K, T, F]`.
    pub fn encode(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        self.check_input(ctx.tape.shape(x))?;
        let steps = ctx.tape.shape(x)[1];
        let mut h = self.input.forward(ctx, x)?;
        if self.config.positional {
            let pe = ctx.input(positional_encoding(steps, self.config.d_model));
            h = ctx.tape.add(h, pe)?;
        }
        for block in &self.blocks {
            h = block.forward(ctx, h)?;
        }
        ctx.tape.reduce(h, Reduction::Mean, &[1], false)
    }

    /// Next-step prediction `[K, F]` from the window `x: [K, T, F]`.
    pub fn predict(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let e = self.encode(ctx, x)?;
        self.head.forward(ctx, e)
    }

    /// Deterministic embeddings of `x: [K, T, F]`, evaluated in chunks.
    /// Refuses an embedder that was never trained unless `allow_untrained`.
    pub fn embed(&self, x: &Tensor, allow_untrained: bool) -> Result<Tensor> {
        if !self.trained && !allow_untrained {
            return Err(Error::contract(
                "embedder has not been trained; pass allow_untrained to use random weights",
            ));
        }
        self.check_input(x.shape())?;
        let k = x.shape()[0];
        let d = self.config.d_model;
        let mut out = Vec::with_capacity(k * d);
        let mut start = 0;
        while start < k {
            let len = Self::CHUNK.min(k - start);
            let chunk = x.narrow(0, start, len)?;
            let mut ctx = Ctx::new(&self.store, Mode::Eval);
            let xv = ctx.input(chunk);
            let e = self.encode(&mut ctx, xv)?;
            out.extend_from_slice(ctx.value(e).data());
            start += len;
        }
        Tensor::new(&[k, d], out)
    }

    /// Per-block attention weights `[K, H, T, T]` for `x`.
    pub fn attention_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x.shape())?;
        let (k, steps) = (x.shape()[0], x.shape()[1]);
        let mut ctx = Ctx::new(&self.store, Mode::Eval);
        let xv = ctx.input(x.clone());
        let mut h = self.input.forward(&mut ctx, xv)?;
        if self.config.positional {
            let pe = ctx.input(positional_encoding(steps, self.config.d_model));
            h = ctx.tape.add(h, pe)?;
        }
        let mut maps = Vec::new();
        for block in &self.blocks {
            let (next, attn) = block.forward_with_attention(&mut ctx, h)?;
            maps.push(ctx.value(attn).clone().reshape(&[k, self.config.heads, steps, steps])?);
            h = next;
        }
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::layers::{input_grad_check, param_grad_check};

    fn small() -> EmbedderConfig {
        EmbedderConfig {
            d_model: 8,
            heads: 2,
            blocks: 2,
            ffn_hidden: 12,
            positional: true,
        }
    }

    #[test]
    fn identical_sequences_embed_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = TransformerEmbedder::new(3, EmbedderConfig::default(), &mut rng).unwrap();
        let row = Tensor::uniform(&[1, 15, 3], 0.0, 1.0, &mut rng);
        let x = Tensor::stack(&[row.clone(), row]).unwrap().reshape(&[2, 15, 3]).unwrap();
        let e = emb.embed(&x, true).unwrap();
        assert_eq!(e.data()[..32], e.data()[32..]);
    }

    #[test]
    fn embedding_width_is_independent_of_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = TransformerEmbedder::new(2, EmbedderConfig::default(), &mut rng).unwrap();
        for tau in [16, 64, 128, 256] {
            let x = Tensor::uniform(&[2, tau - 1, 2], 0.0, 1.0, &mut rng);
            assert_eq!(emb.embed(&x, true).unwrap().shape(), &[2, 32]);
        }
    }

    #[test]
    fn untrained_embedder_is_refused_by_default() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = TransformerEmbedder::new(2, small(), &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 4, 2]);
        assert!(matches!(emb.embed(&x, false), Err(Error::Contract(_))));
        assert!(matches!(emb.embed(&Tensor::zeros(&[1, 0, 2]), true), Err(Error::Contract(_))));
    }

    #[test]
    fn time_permutation_changes_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = TransformerEmbedder::new(3, small(), &mut rng).unwrap();
        let x = Tensor::uniform(&[1, 6, 3], 0.0, 1.0, &mut rng);
        let perm = [5usize, 2, 0, 4, 1, 3];
        let xp = Tensor::from_fn(&[1, 6, 3], |i| x.at(&[0, perm[i / 3], i % 3]));
        let a = emb.embed(&x, true).unwrap();
        let b = emb.embed(&xp, true).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);

        // Without positions, self-attention plus mean pooling is order blind.
        let mut cfg = small();
        cfg.positional = false;
        let emb = TransformerEmbedder::new(3, cfg, &mut rng).unwrap();
        let a = emb.embed(&x, true).unwrap();
        let b = emb.embed(&xp, true).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = TransformerEmbedder::new(2, small(), &mut rng).unwrap();
        let x = Tensor::uniform(&[3, 7, 2], 0.0, 1.0, &mut rng);
        for map in emb.attention_maps(&x).unwrap() {
            assert_eq!(map.shape(), &[3, 2, 7, 7]);
            for row in map.data().chunks(7) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.at(&[0, 0]), 0.0);
        assert_eq!(pe.at(&[0, 1]), 1.0);
        assert!((pe.at(&[2, 0]) - 2f64.sin()).abs() < 1e-15);
        assert!((pe.at(&[2, 3]) - (2.0 / 100.0f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let emb = TransformerEmbedder::new(3, small(), &mut rng).unwrap();
        let x = Tensor::uniform(&[2, 5, 3], 0.0, 1.0, &mut rng);
        let loss = |ctx: &mut Ctx, xv: Var| -> Result<Var> {
            let y = emb.predict(ctx, xv)?;
            let sq = ctx.tape.square(y)?;
            ctx.tape.sum_all(sq)
        };
        let r = input_grad_check(&emb.store, loss, &x, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
        let ids = emb.store.ids_in(&[Group::Embedder]);
        let r = param_grad_check(
            &emb.store,
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
