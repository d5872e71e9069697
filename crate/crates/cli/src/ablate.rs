//! `gatgan ablate`: every configured variant, trained `runs` times at every
//! configured τ on shared data, scored by FTD and the predictive score.

use std::path::{Path, PathBuf};

use gatgan::metrics::predictive_score;
use gatgan::report::{EvalReport, METRIC_FTD, METRIC_MAE};
use gatgan::train::Trainer;
use gatgan::{GatGanModel, TransformerEmbedder, Variant};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{self, init_out, write_file, write_json, Prepared, NORMALIZATION_SIDECAR};
use crate::eval::{ftd_run, run_seed, EMBEDDER, EMBEDDER_LOG};
use crate::train;
use crate::CliError;

pub const REPORT: &str = "ablation";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellScores {
    pub ftd: Option<f64>,
    pub mae: Option<f64>,
}

pub fn cell_dir(out: &Path, tau: usize, variant: Variant, run: usize) -> PathBuf {
    out.join(format!("tau_{tau}")).join(variant.name()).join(format!("run_{run:02}"))
}

/// Trains one model and scores its samples. Works only inside `dir`.
pub fn run_cell(
    cfg: &RunConfig,
    prep: &Prepared,
    embedder: Option<&TransformerEmbedder>,
    variant: Variant,
    run: usize,
    dir: &Path,
) -> Result<CellScores, CliError> {
    dataset::create_dir(dir)?;
    let mut c = cfg.clone();
    c.variant = variant;
    c.seed = run_seed(cfg, run);
    let mut model = GatGanModel::new(c.model_config(prep.features()))?;
    let mut trainer = Trainer::new(c.training_config())?;
    train::fit(&mut model, &mut trainer, &prep.train.data, dir, false, true)?;
    train::save_final(&mut model, &trainer, dir)?;

    let k = cfg.generate_k.min(prep.full.len());
    let syn = model.generate(k, &mut ChaCha8Rng::seed_from_u64(c.seed), true)?;
    let ftd = embedder.map(|e| ftd_run(&prep.full.data, &syn, e, c.seed)).transpose()?;
    let mae = if cfg.metrics.predictive() {
        Some(predictive_score(&prep.test.data, &syn, &cfg.forecaster_config(run))?)
    } else {
        None
    };
    Ok(CellScores { ftd, mae })
}

fn summary(report: &EvalReport, dataset: &str, tau: usize, variant: Variant, metric: &str) -> String {
    report
        .get(dataset, tau, variant.name(), metric)
        .map_or("-".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std))
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.require_source()?;
    let out = init_out(cfg)?;
    let pool = dataset::pool(cfg)?;
    let name = cfg.dataset_name();
    let mut report = EvalReport::new();

    for &tau in &cfg.taus {
        let mut c = cfg.clone();
        c.tau = tau;
        c.validate()?;
        let prep = dataset::prepare(&c, tau, None)?;
        let tau_dir = out.join(format!("tau_{tau}"));
        dataset::create_dir(&tau_dir)?;
        write_json(&tau_dir.join(NORMALIZATION_SIDECAR), &prep.sidecar())?;
        let embedder = if cfg.metrics.ftd() {
            let (e, log) = gatgan::train_embedder(&prep.train.data, &c.embedder_config())?;
            gatgan::save_embedder(tau_dir.join(EMBEDDER), &e)?;
            write_file(&tau_dir.join(EMBEDDER_LOG), log.to_csv())?;
            eprintln!(
                "τ={tau}: embedder validation MSE {:.6} -> {:.6}",
                log.initial_val_mse,
                log.final_val_mse()
            );
            Some(e)
        } else {
            None
        };

        let cells: Vec<(Variant, usize)> = c
            .variants
            .iter()
            .flat_map(|&v| (0..c.runs).map(move |r| (v, r)))
            .collect();
        let scores: Vec<CellScores> = pool.install(|| {
            cells
                .par_iter()
                .map(|&(v, r)| run_cell(&c, &prep, embedder.as_ref(), v, r, &cell_dir(&out, tau, v, r)))
                .collect::<Result<_, CliError>>()
        })?;

        for &v in &c.variants {
            let of = |f: fn(&CellScores) -> Option<f64>| -> Vec<f64> {
                cells
                    .iter()
                    .zip(&scores)
                    .filter(|((cv, _), _)| *cv == v)
                    .filter_map(|(_, s)| f(s))
                    .collect()
            };
            let ftd = of(|s| s.ftd);
            let mae = of(|s| s.mae);
            if !ftd.is_empty() {
                report.add(&name, tau, v.name(), METRIC_FTD, &ftd)?;
            }
            if !mae.is_empty() {
                report.add(&name, tau, v.name(), METRIC_MAE, &mae)?;
            }
        }
    }

    if cfg.metrics.ftd() && cfg.metrics.predictive() {
        if let Err(e) = report.compute_correlation() {
            eprintln!("note: FTD/MAE correlation not computed: {e}");
        }
    }
    report.write(&out, REPORT)?;

    println!("{:<24} {:>5} {:>20} {:>20}", "variant", "tau", "FTD", "MAE");
    for &tau in &cfg.taus {
        for &v in &cfg.variants {
            println!(
                "{:<24} {:>5} {:>20} {:>20}",
                v.name(),
                tau,
                summary(&report, &name, tau, v, METRIC_FTD),
                summary(&report, &name, tau, v, METRIC_MAE)
            );
        }
    }
    if let Some(r) = report.correlation {
        println!("pearson r(FTD, MAE) = {r:.4}");
    }
    Ok(())
}
