//! Loading, normalizing and windowing the configured dataset, plus small
//! file helpers shared by the commands.

use std::path::{Path, PathBuf};

use gatgan::data::{self, subsample_rows, toy_series, write_csv, NormalizationParams, RawSeries, WindowedDataset};
use serde::{Deserialize, Serialize};

use crate::config::{NormalizeScope, RunConfig};
use crate::CliError;

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const NORMALIZATION_SIDECAR: &str = "normalization.json";

/// Min/max statistics of the training data plus column names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub names: Vec<String>,
}

impl Sidecar {
    pub fn params(&self) -> NormalizationParams {
        NormalizationParams {
            min: self.min.clone(),
            max: self.max.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

/// The dataset after normalization, windowing and the train/test split.
pub struct Prepared {
    pub names: Vec<String>,
    pub params: NormalizationParams,
    pub full: WindowedDataset,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
}

impl Prepared {
    pub fn features(&self) -> usize {
        self.full.features()
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            min: self.params.min.clone(),
            max: self.params.max.clone(),
            names: self.names.clone(),
        }
    }
}

fn default_names(f: usize) -> Vec<String> {
    (0..f).map(|j| format!("f{j}")).collect()
}

/// The raw series: the CSV in `data`, or else the `toy` generator.
pub fn load_series(cfg: &RunConfig) -> Result<RawSeries, CliError> {
    cfg.require_source()?;
    if let Some(p) = &cfg.data {
        return Ok(data::load_csv(p, cfg.header.into())?);
    }
    let kind = cfg.toy.expect("source checked");
    let values = toy_series(kind, cfg.toy_length, cfg.toy_features, cfg.toy_noise, cfg.seed)?;
    Ok(RawSeries {
        values,
        names: default_names(cfg.toy_features),
        source: None,
        dropped_rows: 0,
    })
}

fn fit(cfg: &RunConfig, values: &gatgan::Tensor) -> Result<NormalizationParams, CliError> {
    let rows = match cfg.normalize_on {
        NormalizeScope::Full => values.shape()[0],
        NormalizeScope::Train => ((values.shape()[0] as f64 * cfg.train_frac).floor() as usize).max(1),
    };
    Ok(NormalizationParams::fit(&values.narrow(0, 0, rows)?)?)
}

/// Loads and windows the dataset at length `tau`. `params` replaces the
/// fitted min/max when given.
pub fn prepare(cfg: &RunConfig, tau: usize, params: Option<NormalizationParams>) -> Result<Prepared, CliError> {
    let raw = load_series(cfg)?;
    if raw.dropped_rows > 0 {
        eprintln!("note: dropped {} rows with missing values", raw.dropped_rows);
    }
    let params = match params {
        Some(p) if p.features() != raw.features() => {
            return Err(CliError::usage(format!(
                "normalization has {} features, data has {}",
                p.features(),
                raw.features()
            )))
        }
        Some(p) => p,
        None => fit(cfg, &raw.values)?,
    };
    let values = params.normalize(&raw.values)?;
    if raw.len() < tau {
        return Err(CliError::usage(format!(
            "config field `tau`: {tau} exceeds the series length {}",
            raw.len()
        )));
    }
    let mut full = data::window(&values, tau, cfg.stride)?;
    full.normalization = Some(params.clone());
    let (train, test) = data::split(&full, cfg.train_frac, cfg.split, cfg.seed)?;
    Ok(Prepared {
        names: raw.names,
        params,
        full,
        train,
        test,
    })
}

/// `k` real windows for comparison with synthetic ones.
pub fn real_sample(prep: &Prepared, k: usize, seed: u64) -> Result<gatgan::Tensor, CliError> {
    Ok(subsample_rows(&prep.full.data, k, seed)?)
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("json value");
    s.push('\n');
    write_file(path, s)
}

/// Creates the output directory and writes the resolved config into it.
pub fn init_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.require_out()?.to_path_buf();
    create_dir(&out)?;
    write_file(&out.join(CONFIG_SNAPSHOT), cfg.to_toml())?;
    Ok(out)
}

/// Writes `[K, τ, F]` windows as `K·τ` CSV rows.
pub fn write_windows(path: &Path, x: &gatgan::Tensor, names: &[String]) -> Result<(), CliError> {
    let s = x.shape();
    let rows = x.clone().reshape(&[s[0] * s[1], s[2]])?;
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), &rows, Some(names))?;
    Ok(())
}

pub fn write_toy(cfg: &RunConfig, output: &Path) -> Result<(), CliError> {
    let raw = load_series(cfg)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let file = std::fs::File::create(output).map_err(|e| CliError::io(output, e))?;
    write_csv(std::io::BufWriter::new(file), &raw.values, Some(&raw.names))?;
    println!("wrote {} rows × {} features to {}", raw.len(), raw.features(), output.display());
    Ok(())
}

/// Thread pool for independent runs; `threads = 0` uses every core.
pub fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::usage(format!("config field `threads`: {e}")))
}
