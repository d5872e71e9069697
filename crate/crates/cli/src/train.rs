//! `gatgan train`.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use gatgan::checkpoint::save_model;
use gatgan::train::{train_loop, LossRecord, Trainer};
use gatgan::{Error, GatGanModel};

use crate::config::RunConfig;
use crate::dataset::{self, init_out, write_json, NORMALIZATION_SIDECAR};
use crate::CliError;

pub const LOSSES: &str = "losses.csv";
pub const FINAL: &str = "model.ckpt";
pub const BEST: &str = "best.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn epoch_checkpoint(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

fn open_log(path: &Path, append: bool) -> Result<File, CliError> {
    if append && path.exists() {
        return OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e));
    }
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{}", LossRecord::CSV_HEADER).map_err(|e| CliError::io(path, e))?;
    Ok(f)
}

/// Trains `model` on `data`, writing the loss log and periodic, best and
/// final checkpoints under `out`. Divergence is reported with the path of
/// the most recent checkpoint.
pub fn fit(
    model: &mut GatGanModel,
    trainer: &mut Trainer,
    data: &gatgan::Tensor,
    out: &Path,
    append_log: bool,
    quiet: bool,
) -> Result<Vec<LossRecord>, CliError> {
    let log_path = out.join(LOSSES);
    let mut log = open_log(&log_path, append_log)?;
    let every = trainer.cfg.checkpoint_every;
    let log_every = trainer.cfg.log_every;
    if every > 0 {
        dataset::create_dir(&out.join(CHECKPOINT_DIR))?;
    }
    let mut last: Option<PathBuf> = None;
    let mut best = f64::INFINITY;
    let result = train_loop(model, data, trainer, |m, t, rec| {
        writeln!(log, "{}", rec.csv_row()).map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        if every > 0 && rec.epoch % every == 0 {
            let p = epoch_checkpoint(out, rec.epoch);
            save_model(&p, m, Some(t))?;
            last = Some(p);
        }
        if rec.l_r < best {
            best = rec.l_r;
            save_model(out.join(BEST), m, Some(t))?;
        }
        if !quiet && log_every > 0 && rec.epoch % log_every == 0 {
            eprintln!(
                "epoch {:>5}  L_r {:.6}  L_gen {:.6}  L_disc {:.6}  acc {:.3}",
                rec.epoch, rec.l_r, rec.l_gen, rec.l_disc, rec.disc_accuracy
            );
        }
        Ok(())
    });
    match result {
        Ok(records) => Ok(records),
        Err(e @ Error::Diverged { .. }) => {
            let at = last.map_or("none".to_string(), |p| p.display().to_string());
            Err(CliError {
                code: CliError::DIVERGED,
                message: format!("{e}; last checkpoint: {at}"),
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Certifies spectral norms and writes the final checkpoint; returns its digest.
pub fn save_final(model: &mut GatGanModel, trainer: &Trainer, out: &Path) -> Result<String, CliError> {
    model.certify_spectral_norms();
    Ok(save_model(out.join(FINAL), model, Some(trainer))?)
}

pub fn run(cfg: &RunConfig, resume: Option<&Path>) -> Result<(), CliError> {
    cfg.require_source()?;
    let out = init_out(cfg)?;
    let (mut model, mut trainer) = match resume {
        Some(p) => {
            let (m, t) = gatgan::load_model(p)?;
            let t = t.ok_or_else(|| CliError::usage(format!("{} holds no trainer state", p.display())))?;
            (m, t)
        }
        None => {
            let m = GatGanModel::new(cfg.model_config(dataset::load_series(cfg)?.features()))?;
            (m, Trainer::new(cfg.training_config())?)
        }
    };
    let prep = dataset::prepare(cfg, model.config.tau, None)?;
    if prep.features() != model.config.features {
        return Err(CliError::usage(format!(
            "checkpoint expects {} features, data has {}",
            model.config.features,
            prep.features()
        )));
    }
    write_json(&out.join(NORMALIZATION_SIDECAR), &prep.sidecar())?;
    trainer.cfg.epochs = cfg.epochs;
    println!(
        "training {} on {} windows (τ={}, F={}) for {} epochs",
        model.config.variant,
        prep.train.len(),
        model.config.tau,
        prep.features(),
        cfg.epochs.saturating_sub(model.epochs_trained)
    );
    let records = fit(&mut model, &mut trainer, &prep.train.data, &out, resume.is_some(), false)?;
    let digest = save_final(&mut model, &trainer, &out)?;
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        println!("L_r {:.6} -> {:.6}", first.l_r, last.l_r);
    }
    println!("wrote {} (sha256 {digest})", out.join(FINAL).display());
    Ok(())
}
