//! The three GAT-GAN networks and the generation pipeline.
//!
//! The encoder doubles as the generator of latent codes for the adversarial
//! game: it maps a noise-perturbed window to a latent `[K, τ, F̂]` that the
//! discriminator tries to tell apart from standard-normal prior samples.
//! Synthetic series are produced by decoding prior samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Ctx, GraphAttention, Linear, Mode, Orientation, ResidualFfn, SpectralConv1d, LEAKY_SLOPE};
use crate::params::{Group, ParamStore};
use crate::tensor::{Padding, Tensor, Var};

/// Model configurations compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Decoder replaced by one affine map latent → features with a sigmoid.
    NoDecoder,
    NoSpatialAttention,
    NoTemporalAttention,
    /// Spectral convolutions replaced by a pointwise affine map.
    NoEncoderConv,
    /// `λ_r = 0` and no reconstruction phase.
    NoReconstructionLoss,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoDecoder,
        Variant::NoSpatialAttention,
        Variant::NoTemporalAttention,
        Variant::NoEncoderConv,
        Variant::NoReconstructionLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDecoder => "no_decoder",
            Variant::NoSpatialAttention => "no_spatial_attention",
            Variant::NoTemporalAttention => "no_temporal_attention",
            Variant::NoEncoderConv => "no_encoder_conv",
            Variant::NoReconstructionLoss => "no_reconstruction_loss",
        }
    }

    fn orientations(self) -> Vec<Orientation> {
        match self {
            Variant::NoSpatialAttention => vec![Orientation::Temporal],
            Variant::NoTemporalAttention => vec![Orientation::Spatial],
            _ => vec![Orientation::Spatial, Orientation::Temporal],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::contract(format!("unknown variant `{s}`; valid: {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Window length τ.
    pub tau: usize,
    /// Feature count F.
    pub features: usize,
    /// Latent feature width F̂.
    pub latent: usize,
    /// Number of (spatial, temporal) attention pairs per network.
    pub attention_pairs: usize,
    /// Depth of each residual feed-forward block.
    pub ffn_layers: usize,
    pub conv_width: usize,
    /// Standard deviation σ_φ of the additive encoder-input noise.
    pub noise_std: f64,
    pub variant: Variant,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(tau: usize, features: usize) -> Self {
        ModelConfig {
            tau,
            features,
            latent: 16,
            attention_pairs: 2,
            ffn_layers: 2,
            conv_width: 3,
            noise_std: 0.05,
            variant: Variant::Full,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("features", self.features),
            ("latent", self.latent),
            ("conv_width", self.conv_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be positive")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::contract(format!("noise_std {} must be ≥ 0", self.noise_std)));
        }
        Ok(())
    }
}

fn attention_stack<R: Rng + ?Sized>(
    store: &mut ParamStore,
    group: Group,
    name: &str,
    cfg: &ModelConfig,
    residual: bool,
    rng: &mut R,
) -> Vec<GraphAttention> {
    let mut out = Vec::new();
    for pair in 0..cfg.attention_pairs {
        for o in cfg.variant.orientations() {
            let tag = match o {
                Orientation::Spatial => "spatial",
                Orientation::Temporal => "temporal",
            };
            out.push(GraphAttention::new(
                store,
                group,
                &format!("{name}.gat{pair}.{tag}"),
                o,
                cfg.tau,
                cfg.latent,
                residual,
                rng,
            ));
        }
    }
    out
}

#[derive(Clone, Debug)]
enum InputMap {
    Conv(SpectralConv1d),
    Pointwise(Linear),
}

#[derive(Clone, Debug)]
pub struct Encoder {
    input: InputMap,
    pub attention: Vec<GraphAttention>,
    pub conv_out: Option<SpectralConv1d>,
    pub ffn: ResidualFfn,
}

impl Encoder {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let g = Group::Encoder;
        let convs = cfg.variant != Variant::NoEncoderConv;
        let input = if convs {
            InputMap::Conv(SpectralConv1d::new(
                store,
                g,
                "encoder.conv_in",
                cfg.conv_width,
                cfg.features,
                cfg.latent,
                rng,
            ))
        } else {
            InputMap::Pointwise(Linear::new(store, g, "encoder.input", cfg.features, cfg.latent, rng))
        };
        let attention = attention_stack(store, g, "encoder", cfg, false, rng);
        let conv_out = convs.then(|| {
            SpectralConv1d::new(store, g, "encoder.conv_out", cfg.conv_width, cfg.latent, cfg.latent, rng)
        });
        let ffn = ResidualFfn::new(store, g, "encoder.ffn", cfg.latent, cfg.ffn_layers, rng);
        Encoder {
            input,
            attention,
            conv_out,
            ffn,
        }
    }

    pub fn spectral_convs(&self) -> Vec<&SpectralConv1d> {
        let mut v = Vec::new();
        if let InputMap::Conv(c) = &self.input {
            v.push(c);
        }
        if let Some(c) = &self.conv_out {
            v.push(c);
        }
        v
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = match &self.input {
            InputMap::Conv(c) => c.forward(ctx, x)?,
            InputMap::Pointwise(l) => {
                let h = l.forward(ctx, x)?;
                ctx.tape.leaky_relu(h, LEAKY_SLOPE)?
            }
        };
        for gat in &self.attention {
            h = gat.forward(ctx, h)?;
        }
        if let Some(c) = &self.conv_out {
            h = c.forward(ctx, h)?;
            h = ctx.tape.avg_pool1d(h, 2, 1, Padding::Same)?;
        }
        self.ffn.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub attention: Vec<GraphAttention>,
    pub ffn: Option<ResidualFfn>,
    pub output: Linear,
}

impl Decoder {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let g = Group::Decoder;
        let (attention, ffn) = if cfg.variant == Variant::NoDecoder {
            (Vec::new(), None)
        } else {
            (
                attention_stack(store, g, "decoder", cfg, false, rng),
                Some(ResidualFfn::new(store, g, "decoder.ffn", cfg.latent, cfg.ffn_layers, rng)),
            )
        };
        let output = Linear::new(store, g, "decoder.output", cfg.latent, cfg.features, rng);
        Decoder {
            attention,
            ffn,
            output,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        let mut h = z;
        for gat in &self.attention {
            h = gat.forward(ctx, h)?;
        }
        if let Some(ffn) = &self.ffn {
            h = ffn.forward(ctx, h)?;
        }
        let y = self.output.forward(ctx, h)?;
        ctx.tape.sigmoid(y)
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub attention: Vec<GraphAttention>,
    pub ffn: ResidualFfn,
    pub collapse: Linear,
    pub head: Linear,
    tau: usize,
    latent: usize,
}

impl Discriminator {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let g = Group::Discriminator;
        let attention = attention_stack(store, g, "discriminator", cfg, true, rng);
        let ffn = ResidualFfn::new(store, g, "discriminator.ffn", cfg.latent, cfg.ffn_layers, rng);
        let collapse = Linear::new(store, g, "discriminator.collapse", cfg.tau * cfg.latent, cfg.latent, rng);
        let head = Linear::new(store, g, "discriminator.head", cfg.latent, 1, rng);
        Discriminator {
            attention,
            ffn,
            collapse,
            head,
            tau: cfg.tau,
            latent: cfg.latent,
        }
    }

    /// Scores `[K]` in (0, 1) for latents `[K, τ, F̂]`.
    pub fn forward(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        let k = ctx.tape.shape(z)[0];
        let mut h = z;
        for gat in &self.attention {
            h = gat.forward(ctx, h)?;
        }
        h = self.ffn.forward(ctx, h)?;
        h = ctx.tape.reshape(h, &[k, self.tau * self.latent])?;
        h = self.collapse.forward(ctx, h)?;
        h = ctx.tape.leaky_relu(h, LEAKY_SLOPE)?;
        h = self.head.forward(ctx, h)?;
        h = ctx.tape.sigmoid(h)?;
        ctx.tape.reshape(h, &[k])
    }
}

/// How [`GatGanModel::generate`] produces series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Decode standard-normal prior samples.
    Prior,
    /// Encode noise-perturbed real windows, then decode.
    Reconstruct,
}

#[derive(Clone, Debug)]
pub struct GatGanModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub discriminator: Discriminator,
    pub epochs_trained: usize,
}

/// Adds `N(0, σ²)` noise to every element. Not clipped.
pub fn inject_noise<R: Rng + ?Sized>(x: &Tensor, std: f64, rng: &mut R) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(Error::contract(format!("noise std {std} must be ≥ 0")));
    }
    if std == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::contract(e.to_string()))?;
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v += normal.sample(rng));
    Ok(out)
}

impl GatGanModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config, &mut rng);
        let decoder = Decoder::new(&mut store, &config, &mut rng);
        let discriminator = Discriminator::new(&mut store, &config, &mut rng);
        Ok(GatGanModel {
            config,
            store,
            encoder,
            decoder,
            discriminator,
            epochs_trained: 0,
        })
    }

    pub fn check_series(&self, x: &[usize]) -> Result<()> {
        let c = &self.config;
        if x.len() != 3 || x[1] != c.tau || x[2] != c.features {
            return Err(Error::dim(
                "series",
                format!("expected [K, {}, {}], got {x:?}", c.tau, c.features),
            ));
        }
        Ok(())
    }

    pub fn check_latent(&self, z: &[usize]) -> Result<()> {
        let c = &self.config;
        if z.len() != 3 || z[1] != c.tau || z[2] != c.latent {
            return Err(Error::dim(
                "latent",
                format!("expected [K, {}, {}], got {z:?}", c.tau, c.latent),
            ));
        }
        Ok(())
    }

    pub fn encode_var(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        self.check_series(ctx.tape.shape(x))?;
        self.encoder.forward(ctx, x)
    }

    pub fn decode_var(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        self.check_latent(ctx.tape.shape(z))?;
        self.decoder.forward(ctx, z)
    }

    pub fn discriminate_var(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        self.check_latent(ctx.tape.shape(z))?;
        self.discriminator.forward(ctx, z)
    }

    fn run(&self, mode: Mode, x: &Tensor, f: impl Fn(&Self, &mut Ctx, Var) -> Result<Var>) -> Result<Tensor> {
        let mut ctx = Ctx::new(&self.store, mode);
        let xv = ctx.input(x.clone());
        let y = f(self, &mut ctx, xv)?;
        Ok(ctx.value(y).clone())
    }

    /// Latents for an (already noise-perturbed) batch.
    pub fn encode(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.run(mode, x, Self::encode_var)
    }

    pub fn decode(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        self.run(mode, z, Self::decode_var)
    }

    pub fn discriminate(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        self.run(mode, z, Self::discriminate_var)
    }

    /// i.i.d. standard-normal latents `[K, τ, F̂]`.
    pub fn sample_prior<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Tensor> {
        if k == 0 {
            return Err(Error::contract("prior sample size must be at least 1"));
        }
        let shape = [k, self.config.tau, self.config.latent];
        Ok(Tensor::from_fn(&shape, |_| StandardNormal.sample(rng)))
    }

    /// `K` synthetic windows by decoding prior samples, in eval mode.
    pub fn generate<R: Rng + ?Sized>(&self, k: usize, rng: &mut R, allow_untrained: bool) -> Result<Tensor> {
        self.guard_trained(allow_untrained)?;
        let z = self.sample_prior(k, rng)?;
        self.decode(&z, Mode::Eval)
    }

    /// Encodes noise-perturbed copies of `x` and decodes them, in eval mode.
    pub fn reconstruct<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R, allow_untrained: bool) -> Result<Tensor> {
        self.guard_trained(allow_untrained)?;
        let noisy = inject_noise(x, self.config.noise_std, rng)?;
        let z = self.encode(&noisy, Mode::Eval)?;
        self.decode(&z, Mode::Eval)
    }

    fn guard_trained(&self, allow_untrained: bool) -> Result<()> {
        if self.epochs_trained == 0 && !allow_untrained {
            return Err(Error::contract(
                "model has not been trained; pass allow_untrained to generate from initial weights",
            ));
        }
        Ok(())
    }

    /// Trainable scalars per network.
    pub fn param_counts(&self) -> BTreeMap<Group, usize> {
        [Group::Encoder, Group::Decoder, Group::Discriminator]
            .into_iter()
            .map(|g| (g, self.store.count(Some(g))))
            .collect()
    }

    /// Tightens every spectral-norm estimate; see [`SpectralConv1d::certify`].
    pub fn certify_spectral_norms(&mut self) {
        for conv in self.encoder.spectral_convs() {
            conv.certify(&mut self.store, SpectralConv1d::CERTIFY_ITERS);
        }
    }

    /// Replaces the encoder and decoder batch-norm running statistics with
    /// statistics of `data` under the current weights, averaged over chunks
    /// of `CALIBRATION_CHUNK` windows. Deterministic.
    pub fn calibrate_batch_norm(&mut self, data: &Tensor) -> Result<()> {
        self.check_series(data.shape())?;
        let k = data.shape()[0];
        let mut sums: BTreeMap<crate::tensor::ParamId, Tensor> = BTreeMap::new();
        let mut start = 0;
        while start < k {
            let n = CALIBRATION_CHUNK.min(k - start);
            let chunk = data.narrow(0, start, n)?;
            let mut ctx = Ctx::new(&self.store, Mode::Calibrate);
            let x = ctx.input(chunk);
            let z = self.encode_var(&mut ctx, x)?;
            self.decode_var(&mut ctx, z)?;
            let w = n as f64 / k as f64;
            for (id, t) in ctx.into_updates() {
                let acc = sums.entry(id).or_insert_with(|| Tensor::zeros(t.shape()));
                acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, v)| *a += w * v);
            }
            start += n;
        }
        self.store.apply_updates(sums.into_iter().collect());
        Ok(())
    }
}

/// Windows per forward pass in [`GatGanModel::calibrate_batch_norm`].
pub const CALIBRATION_CHUNK: usize = 256;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{input_grad_check, param_grad_check, spectral_norm_exact};

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            latent: 4,
            attention_pairs: 1,
            ffn_layers: 1,
            variant,
            seed: 7,
            ..ModelConfig::new(8, 3)
        }
    }

    #[test]
    fn shapes_round_trip_for_supported_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tau in [16, 64, 128, 256] {
            let cfg = ModelConfig {
                latent: 4,
                attention_pairs: 1,
                ffn_layers: 1,
                ..ModelConfig::new(tau, 2)
            };
            let m = GatGanModel::new(cfg).unwrap();
            let x = Tensor::uniform(&[2, tau, 2], 0.0, 1.0, &mut rng);
            let z = m.encode(&x, Mode::Eval).unwrap();
            assert_eq!(z.shape(), &[2, tau, 4]);
            let y = m.decode(&z, Mode::Eval).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn every_variant_builds_and_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(&[3, 8, 3], 0.0, 1.0, &mut rng);
        for v in Variant::ALL {
            let m = GatGanModel::new(tiny(v)).unwrap();
            let z = m.encode(&x, Mode::Train).unwrap();
            let y = m.decode(&z, Mode::Train).unwrap();
            let s = m.discriminate(&z, Mode::Train).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert_eq!(s.shape(), &[3]);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("no_such".parse::<Variant>().is_err());
    }

    #[test]
    fn networks_have_disjoint_parameters() {
        let m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (_, p) in m.store.iter() {
            assert!(seen.insert(p.name.clone()));
            let prefix = p.name.split('.').next().unwrap();
            let expect = match p.group {
                Group::Encoder => "encoder",
                Group::Decoder => "decoder",
                Group::Discriminator => "discriminator",
                _ => unreachable!(),
            };
            assert_eq!(prefix, expect);
        }
    }

    #[test]
    fn decoder_output_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        let z = Tensor::uniform(&[5, 8, 4], -3.0, 3.0, &mut rng);
        let y = m.decode(&z, Mode::Eval).unwrap();
        assert!(y.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn zero_head_scores_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        m.discriminator.head.clone().zero(&mut m.store);
        for k in [1, 32] {
            let z = m.sample_prior(k, &mut rng).unwrap();
            let s = m.discriminate(&z, Mode::Eval).unwrap();
            assert_eq!(s.shape(), &[k]);
            assert!(s.data().iter().all(|v| *v == 0.5));
        }
    }

    #[test]
    fn encode_is_deterministic_and_checks_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        let x = Tensor::uniform(&[2, 8, 3], 0.0, 1.0, &mut rng);
        assert_eq!(m.encode(&x, Mode::Eval).unwrap(), m.encode(&x, Mode::Eval).unwrap());
        assert!(matches!(
            m.encode(&Tensor::zeros(&[2, 8, 2]), Mode::Eval),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            m.decode(&Tensor::zeros(&[2, 7, 4]), Mode::Eval),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn noise_injection_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::uniform(&[2, 3, 4], 0.0, 1.0, &mut rng);
        assert_eq!(inject_noise(&x, 0.0, &mut rng).unwrap(), x);
        let a = inject_noise(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = inject_noise(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        let big = Tensor::zeros(&[1_000_000]);
        let n = inject_noise(&big, 0.3, &mut rng).unwrap();
        let var = n.data().iter().map(|v| v * v).sum::<f64>() / n.len() as f64;
        assert!((var / 0.09 - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn prior_moments() {
        let m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = m.sample_prior(31_250, &mut rng).unwrap();
        assert_eq!(z.len(), 1_000_000);
        let mean = z.data().iter().sum::<f64>() / z.len() as f64;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.02);
        let again = m.sample_prior(31_250, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(z, again);
    }

    #[test]
    fn generate_requires_training_unless_allowed() {
        let m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(m.generate(2, &mut rng, false), Err(Error::Contract(_))));
        let a = m.generate(2, &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
        let b = m.generate(2, &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[2, 8, 3]);
    }

    #[test]
    fn parameter_counts_are_reproducible() {
        let a = GatGanModel::new(tiny(Variant::Full)).unwrap();
        let b = GatGanModel::new(tiny(Variant::Full)).unwrap();
        assert_eq!(a.param_counts(), b.param_counts());
        assert_eq!(a.store.digest(&[Group::Encoder, Group::Decoder, Group::Discriminator]),
            b.store.digest(&[Group::Encoder, Group::Decoder, Group::Discriminator]));
    }

    #[test]
    fn spectral_norms_certified() {
        let mut m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        m.certify_spectral_norms();
        for conv in m.encoder.spectral_convs() {
            assert!(spectral_norm_exact(&conv.normalized_kernel(&m.store)) <= 1.0 + 1e-3);
        }
    }

    #[test]
    fn networks_pass_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = GatGanModel::new(tiny(Variant::Full)).unwrap();
        let x = Tensor::uniform(&[2, 8, 3], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 8, 4], -1.0, 1.0, &mut rng);
        let enc = |ctx: &mut Ctx, xv: Var| -> Result<Var> {
            let z = m.encode_var(ctx, xv)?;
            let wv = ctx.input(w.clone());
            let z = ctx.tape.mul(z, wv)?;
            ctx.tape.sum_all(z)
        };
        let r = input_grad_check(&m.store, enc, &x, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-4, "encoder input {}", r.max_rel_err);
        let ids = m.store.ids_in(&[Group::Encoder]);
        let r = param_grad_check(
            &m.store,
            &ids,
            |ctx| {
                let xv = ctx.input(x.clone());
                enc(ctx, xv)
            },
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "encoder params {}", r.max_rel_err);
    }
}
