//! Evaluation metrics: the Fréchet transformer distance (FTD), the
//! train-on-synthetic test-on-real predictive score, and run statistics.

mod frechet;
mod ftd;
mod predictive;
mod stats;

pub use frechet::{fit_moments, frechet_distance, GaussianMoments};
pub use ftd::{embedder_mse, ftd_score, train_embedder, EmbedderTrainConfig, EmbedderTrainLog};
pub use predictive::{forecast_mae, mae, predictive_score, train_forecaster, ForecasterConfig, DEFAULT_HORIZON};
pub use stats::{aggregate_runs, pearson_corr};
