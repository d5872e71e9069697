//! `gatgan eval` and `gatgan train-embedder`.

use std::path::Path;

use gatgan::data::{self, subsample_rows};
use gatgan::metrics::{ftd_score, predictive_score};
use gatgan::report::{EvalReport, METRIC_FTD, METRIC_MAE};
use gatgan::{Tensor, TransformerEmbedder};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{self, init_out, write_file, Prepared};
use crate::generate::Manifest;
use crate::CliError;

pub const REPORT: &str = "report";
pub const EMBEDDER: &str = "embedder.ckpt";
pub const EMBEDDER_LOG: &str = "embedder_log.csv";

/// Seed of the `run`-th repetition.
pub fn run_seed(cfg: &RunConfig, run: usize) -> u64 {
    cfg.seed.wrapping_add(run as u64)
}

/// FTD of one repetition: both sides subsampled to the same count.
pub fn ftd_run(real: &Tensor, synthetic: &Tensor, embedder: &TransformerEmbedder, seed: u64) -> Result<f64, CliError> {
    let k = real.shape()[0].min(synthetic.shape()[0]);
    let r = subsample_rows(real, k, seed)?;
    let s = subsample_rows(synthetic, k, seed)?;
    Ok(ftd_score(&r, &s, embedder)?)
}

/// Reads synthetic windows stacked `τ` rows apiece and maps them into the
/// real data's normalized space.
fn load_synthetic(cfg: &RunConfig, path: &Path, prep: &Prepared) -> Result<Tensor, CliError> {
    if let Some(m) = Manifest::find(path)? {
        if m.tau != cfg.tau {
            return Err(CliError::usage(format!(
                "τ mismatch: {} was generated with τ={}, evaluation uses τ={}",
                path.display(),
                m.tau,
                cfg.tau
            )));
        }
    }
    let raw = data::load_csv(path, cfg.header.into())?;
    if raw.features() != prep.features() {
        return Err(CliError::usage(format!(
            "synthetic data has {} features, real data has {}",
            raw.features(),
            prep.features()
        )));
    }
    if raw.len() % cfg.tau != 0 {
        return Err(CliError::usage(format!(
            "τ mismatch: {} has {} rows, not a multiple of τ={}",
            path.display(),
            raw.len(),
            cfg.tau
        )));
    }
    let values = prep.params.normalize(&raw.values)?;
    Ok(data::window(&values, cfg.tau, cfg.tau)?.data)
}

pub fn run(cfg: &RunConfig, synthetic: &Path, embedder: Option<&Path>) -> Result<(), CliError> {
    cfg.require_source()?;
    let embedder = match (cfg.metrics.ftd(), embedder) {
        (true, None) => return Err(CliError::usage("ftd needs --embedder (see `gatgan train-embedder`)")),
        (true, Some(p)) => Some(gatgan::load_embedder(p)?),
        (false, _) => None,
    };
    let prep = dataset::prepare(cfg, cfg.tau, None)?;
    let syn = load_synthetic(cfg, synthetic, &prep)?;
    let out = init_out(cfg)?;
    let variant = Manifest::find(synthetic)?.map_or_else(|| cfg.variant.name().to_string(), |m| m.variant);

    let pool = dataset::pool(cfg)?;
    let scores: Vec<(Option<f64>, Option<f64>)> = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|r| {
                let seed = run_seed(cfg, r);
                let ftd = embedder
                    .as_ref()
                    .map(|e| ftd_run(&prep.full.data, &syn, e, seed))
                    .transpose()?;
                let mae = if cfg.metrics.predictive() {
                    Some(predictive_score(&prep.test.data, &syn, &cfg.forecaster_config(r))?)
                } else {
                    None
                };
                Ok((ftd, mae))
            })
            .collect::<Result<_, CliError>>()
    })?;

    let mut report = EvalReport::new();
    let dataset = cfg.dataset_name();
    let ftd: Vec<f64> = scores.iter().filter_map(|s| s.0).collect();
    let mae: Vec<f64> = scores.iter().filter_map(|s| s.1).collect();
    if !ftd.is_empty() {
        report.add(&dataset, cfg.tau, &variant, METRIC_FTD, &ftd)?;
    }
    if !mae.is_empty() {
        report.add(&dataset, cfg.tau, &variant, METRIC_MAE, &mae)?;
    }
    report.write(&out, REPORT)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn train_embedder(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.require_source()?;
    let prep = dataset::prepare(cfg, cfg.tau, None)?;
    let out = init_out(cfg)?;
    let (emb, log) = gatgan::train_embedder(&prep.train.data, &cfg.embedder_config())?;
    let digest = gatgan::save_embedder(out.join(EMBEDDER), &emb)?;
    write_file(&out.join(EMBEDDER_LOG), log.to_csv())?;
    for (e, (t, v)) in log.train_mse.iter().zip(&log.val_mse).enumerate() {
        println!("epoch {:>4}  train_mse {t:.6}  val_mse {v:.6}", e + 1);
    }
    println!(
        "validation MSE {:.6} -> {:.6}; wrote {} (sha256 {digest})",
        log.initial_val_mse,
        log.final_val_mse(),
        out.join(EMBEDDER).display()
    );
    Ok(())
}
