//! Graph-attention adversarial autoencoder for multivariate time series.
//!
//! An encoder built from spectral-normalized convolutions and graph
//! attention over features and time steps maps windows `[K, τ, F]` to latent
//! sequences; a decoder maps them back; a discriminator pushes the encoded
//! distribution toward a standard normal prior so that decoding prior
//! samples generates new series. Evaluation uses the Fréchet distance between
//! transformer embeddings (FTD) and a train-on-synthetic, test-on-real LSTM
//! forecasting score.
//!
//! ```no_run
//! use gatgan::{toy_generator, GatGanModel, ModelConfig, ToyKind, Trainer, TrainingConfig};
//!
//! let data = toy_generator(ToyKind::CoupledSines, 128, 16, 3, 0.01, 0)?;
//! let mut model = GatGanModel::new(ModelConfig::new(16, 3))?;
//! let mut trainer = Trainer::new(TrainingConfig::default())?;
//! gatgan::train_loop(&mut model, &data.data, &mut trainer, |_, _, _| Ok(()))?;
//! # Ok::<(), gatgan::Error>(())
//! ```

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod params;
pub mod report;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_embedder, load_model, save_embedder, save_model, Container, CHECKPOINT_VERSION};
pub use data::{
    load_csv, minmax_normalize, split, toy_generator, window, HeaderMode, NormalizationParams, RawSeries,
    SplitMode, ToyKind, WindowedDataset,
};
pub use error::{Error, Result};
pub use layers::{EmbedderConfig, Mode, TransformerEmbedder};
pub use metrics::{
    aggregate_runs, fit_moments, frechet_distance, ftd_score, pearson_corr, predictive_score, train_embedder,
    EmbedderTrainConfig, ForecasterConfig, GaussianMoments,
};
pub use model::{GatGanModel, GenerationMode, ModelConfig, Variant};
pub use params::{Group, ParamStore};
pub use report::EvalReport;
pub use tensor::Tensor;
pub use train::{train_loop, LossRecord, Trainer, TrainingConfig};
