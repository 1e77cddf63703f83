//! Experiment orchestration: data generation, model fitting, agent training,
//! paired evaluation, interpretability reports and hyper-parameter sweeps.

pub mod config;
pub mod datagen;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod interpret;
pub mod io;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
