//! `gatgan generate`.

use std::path::{Path, PathBuf};

use gatgan::checkpoint::{model_from_container, sha256_hex, Container};
use gatgan::GenerationMode;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{self, init_out, write_json, Sidecar, NORMALIZATION_SIDECAR};
use crate::CliError;

pub const SYNTHETIC: &str = "synthetic.csv";

/// Written beside the synthetic CSV, with the same stem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub mode: GenerationMode,
    pub k: usize,
    pub tau: usize,
    pub features: usize,
    pub variant: String,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub denormalized: bool,
}

impl Manifest {
    pub fn path_for(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// The manifest beside `csv`, if one exists.
    pub fn find(csv: &Path) -> Result<Option<Self>, CliError> {
        let p = Self::path_for(csv);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
    }
}

pub fn run(cfg: &RunConfig, checkpoint: &Path, normalization: Option<&Path>, allow_untrained: bool) -> Result<(), CliError> {
    let bytes = std::fs::read(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let digest = sha256_hex(&bytes);
    let (model, _) = model_from_container(Container::from_bytes(&bytes)?)?;
    let out = init_out(cfg)?;

    let sidecar_path = match normalization {
        Some(p) => Some(p.to_path_buf()),
        None => checkpoint
            .parent()
            .map(|d| d.join(NORMALIZATION_SIDECAR))
            .filter(|p| p.exists()),
    };
    let sidecar = sidecar_path.as_deref().map(Sidecar::load).transpose()?;
    if let Some(s) = &sidecar {
        if s.min.len() != model.config.features {
            return Err(CliError::usage(format!(
                "normalization has {} features, checkpoint has {}",
                s.min.len(),
                model.config.features
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = match cfg.generation_mode {
        GenerationMode::Prior => model.generate(cfg.generate_k, &mut rng, allow_untrained)?,
        GenerationMode::Reconstruct => {
            let prep = dataset::prepare(cfg, model.config.tau, sidecar.as_ref().map(Sidecar::params))?;
            let real = dataset::real_sample(&prep, cfg.generate_k, cfg.seed)?;
            model.reconstruct(&real, &mut rng, allow_untrained)?
        }
    };
    let k = x.shape()[0];
    let (x, names) = match &sidecar {
        Some(s) => {
            let flat = x.reshape(&[k * model.config.tau, model.config.features])?;
            let den = s.params().denormalize(&flat)?;
            (den.reshape(&[k, model.config.tau, model.config.features])?, s.names.clone())
        }
        None => (x, (0..model.config.features).map(|j| format!("f{j}")).collect()),
    };
    let csv = out.join(SYNTHETIC);
    dataset::write_windows(&csv, &x, &names)?;
    let manifest = Manifest {
        seed: cfg.seed,
        mode: cfg.generation_mode,
        k,
        tau: model.config.tau,
        features: model.config.features,
        variant: model.config.variant.name().to_string(),
        checkpoint: checkpoint.to_path_buf(),
        checkpoint_sha256: digest,
        denormalized: sidecar.is_some(),
    };
    write_json(&Manifest::path_for(&csv), &manifest)?;
    println!("wrote {k} windows of {} steps to {}", model.config.tau, csv.display());
    Ok(())
}
