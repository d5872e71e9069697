//! Run configuration: a flat TOML file, overridden by command-line flags.
//!
//! Every key is optional in the file; unset keys take the defaults below.
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::path::{Path, PathBuf};

use gatgan::data::{HeaderMode, SplitMode, ToyKind};
use gatgan::layers::EmbedderConfig;
use gatgan::metrics::{EmbedderTrainConfig, ForecasterConfig, DEFAULT_HORIZON};
use gatgan::model::{GenerationMode, ModelConfig, Variant};
use gatgan::train::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Header {
    Auto,
    Present,
    Absent,
}

impl From<Header> for HeaderMode {
    fn from(h: Header) -> Self {
        match h {
            Header::Auto => HeaderMode::Auto,
            Header::Present => HeaderMode::Present,
            Header::Absent => HeaderMode::Absent,
        }
    }
}

/// Rows the min-max statistics are fitted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeScope {
    /// The whole series.
    Full,
    /// The leading `train_frac` of the series only.
    Train,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSet {
    Ftd,
    Predictive,
    Both,
}

impl MetricSet {
    pub fn ftd(self) -> bool {
        matches!(self, MetricSet::Ftd | MetricSet::Both)
    }

    pub fn predictive(self) -> bool {
        matches!(self, MetricSet::Predictive | MetricSet::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Data.
    /// CSV with one row per time step.
    pub data: Option<PathBuf>,
    /// Synthetic source used when `data` is unset.
    pub toy: Option<ToyKind>,
    pub toy_length: usize,
    pub toy_features: usize,
    pub toy_noise: f64,
    pub header: Header,
    /// Dataset name in reports; defaults to the file stem or toy kind.
    pub dataset: Option<String>,
    pub out: Option<PathBuf>,
    pub tau: usize,
    pub stride: usize,
    pub train_frac: f64,
    pub split: SplitMode,
    pub normalize_on: NormalizeScope,
    pub seed: u64,

    // Model.
    pub variant: Variant,
    pub latent: usize,
    pub attention_pairs: usize,
    pub ffn_layers: usize,
    pub conv_width: usize,
    pub noise_std: f64,

    // Training.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub flip_prob: f64,
    pub lambda_r: f64,
    pub log_every: usize,
    pub checkpoint_every: usize,

    // Generation.
    pub generate_k: usize,
    pub generation_mode: GenerationMode,

    // Evaluation.
    pub runs: usize,
    pub metrics: MetricSet,
    pub horizon: usize,
    pub embedder_epochs: usize,
    pub embedder_batch_size: usize,
    pub embedder_lr: f64,
    pub embedder_d_model: usize,
    pub embedder_heads: usize,
    pub embedder_blocks: usize,
    pub embedder_ffn_hidden: usize,
    pub forecaster_hidden: usize,
    pub forecaster_layers: usize,
    pub forecaster_epochs: usize,
    pub forecaster_lr: f64,
    pub forecaster_batch_size: usize,

    // Ablation.
    pub variants: Vec<Variant>,
    pub taus: Vec<usize>,
    /// Worker threads for independent runs; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(16, 1);
        let t = TrainingConfig::default();
        let e = EmbedderTrainConfig::default();
        let f = ForecasterConfig::default();
        RunConfig {
            data: None,
            toy: None,
            toy_length: 384,
            toy_features: 3,
            toy_noise: 0.01,
            header: Header::Auto,
            dataset: None,
            out: None,
            tau: 16,
            stride: 1,
            train_frac: 0.8,
            split: SplitMode::Chronological,
            normalize_on: NormalizeScope::Full,
            seed: 0,
            variant: Variant::Full,
            latent: m.latent,
            attention_pairs: m.attention_pairs,
            ffn_layers: m.ffn_layers,
            conv_width: m.conv_width,
            noise_std: m.noise_std,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr_encoder: t.lr_encoder,
            lr_decoder: t.lr_decoder,
            lr_generator: t.lr_generator,
            lr_discriminator: t.lr_discriminator,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            flip_prob: t.flip_prob,
            lambda_r: t.lambda_r,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
            generate_k: 256,
            generation_mode: GenerationMode::Prior,
            runs: 10,
            metrics: MetricSet::Both,
            horizon: DEFAULT_HORIZON,
            embedder_epochs: e.epochs,
            embedder_batch_size: e.batch_size,
            embedder_lr: e.lr,
            embedder_d_model: e.embedder.d_model,
            embedder_heads: e.embedder.heads,
            embedder_blocks: e.embedder.blocks,
            embedder_ffn_hidden: e.embedder.ffn_hidden,
            forecaster_hidden: f.hidden,
            forecaster_layers: f.layers,
            forecaster_epochs: f.epochs,
            forecaster_lr: f.lr,
            forecaster_batch_size: f.batch_size,
            variants: Variant::ALL.to_vec(),
            taus: vec![64],
            threads: 0,
        }
    }
}

fn invalid(field: &str, why: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("config field `{field}`: {why}"))
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` key by key, and fills
    /// everything else from the defaults.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model_config(1).validate().map_err(|e| invalid("model", e))?;
        self.training_config().validate().map_err(|e| invalid("training", e))?;
        self.embedder_config().validate().map_err(|e| invalid("embedder", e))?;
        self.forecaster_config(0).validate().map_err(|e| invalid("forecaster", e))?;
        if self.tau < 2 {
            return Err(invalid("tau", "must be at least 2"));
        }
        if self.stride == 0 {
            return Err(invalid("stride", "must be positive"));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(invalid("train_frac", "must lie in (0, 1)"));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(invalid("variants", "must name at least one variant"));
        }
        if self.taus.iter().any(|&t| t < 2) || self.taus.is_empty() {
            return Err(invalid("taus", "must be a non-empty list of lengths ≥ 2"));
        }
        Ok(())
    }

    /// The dataset source, which must be set for any command reading data.
    pub fn require_source(&self) -> Result<(), CliError> {
        if self.data.is_none() && self.toy.is_none() {
            return Err(invalid("data", "no dataset given (set `data` to a CSV path or `toy` to a generator)"));
        }
        Ok(())
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| invalid("out", "no output location given"))
    }

    pub fn dataset_name(&self) -> String {
        if let Some(d) = &self.dataset {
            return d.clone();
        }
        match (&self.data, self.toy) {
            (Some(p), _) => p.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            (None, Some(ToyKind::CoupledSines)) => "coupled_sines".into(),
            (None, Some(ToyKind::ArProcess)) => "ar_process".into(),
            (None, None) => "data".into(),
        }
    }

    pub fn model_config(&self, features: usize) -> ModelConfig {
        ModelConfig {
            tau: self.tau,
            features,
            latent: self.latent,
            attention_pairs: self.attention_pairs,
            ffn_layers: self.ffn_layers,
            conv_width: self.conv_width,
            noise_std: self.noise_std,
            variant: self.variant,
            seed: self.seed,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_encoder: self.lr_encoder,
            lr_decoder: self.lr_decoder,
            lr_generator: self.lr_generator,
            lr_discriminator: self.lr_discriminator,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            flip_prob: self.flip_prob,
            lambda_r: self.lambda_r,
            seed: self.seed,
            log_every: self.log_every,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn embedder_config(&self) -> EmbedderTrainConfig {
        EmbedderTrainConfig {
            embedder: EmbedderConfig {
                d_model: self.embedder_d_model,
                heads: self.embedder_heads,
                blocks: self.embedder_blocks,
                ffn_hidden: self.embedder_ffn_hidden,
                positional: true,
            },
            epochs: self.embedder_epochs,
            batch_size: self.embedder_batch_size,
            lr: self.embedder_lr,
            val_frac: 0.1,
            seed: self.seed,
        }
    }

    pub fn forecaster_config(&self, run: usize) -> ForecasterConfig {
        ForecasterConfig {
            hidden: self.forecaster_hidden,
            layers: self.forecaster_layers,
            epochs: self.forecaster_epochs,
            lr: self.forecaster_lr,
            batch_size: self.forecaster_batch_size,
            horizon: self.horizon,
            seed: self.seed.wrapping_add(run as u64),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses `key=value`; the value is read as TOML and falls back to a bare
/// string, so `--set variant=full` and `--set lr_encoder=0.001` both work.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.trim().to_string()));
    Ok((k.to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.require_source().is_err());
    }

    #[test]
    fn overrides_beat_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "tau = 32\nepochs = 5\ntoy = \"ar_process\"\n").unwrap();
        let cfg = RunConfig::resolve(Some(&p), &[parse_override("epochs=7").unwrap()]).unwrap();
        assert_eq!((cfg.tau, cfg.epochs, cfg.toy), (32, 7, Some(ToyKind::ArProcess)));
        assert_eq!(cfg.dataset_name(), "ar_process");
    }

    #[test]
    fn unknown_and_invalid_fields_name_the_field() {
        let e = RunConfig::resolve(None, &[parse_override("epoch=3").unwrap()]).unwrap_err();
        assert!(e.message.contains("epoch"), "{}", e.message);
        assert_eq!(e.code, 2);
        let e = RunConfig::resolve(None, &[parse_override("train_frac=1.5").unwrap()]).unwrap_err();
        assert!(e.message.contains("train_frac"), "{}", e.message);
        let e = RunConfig::resolve(None, &[parse_override("variant=bogus").unwrap()]).unwrap_err();
        assert!(e.message.contains("variant"), "{}", e.message);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.data = Some("x.csv".into());
        cfg.lr_encoder = 3e-4;
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn override_values_are_typed() {
        assert_eq!(parse_override("tau=8").unwrap().1, toml::Value::Integer(8));
        assert_eq!(parse_override("variant=full").unwrap().1, toml::Value::String("full".into()));
        assert!(parse_override("novalue").is_err());
    }
}
