//! Mean-field Gaussian Bayesian MLP trained with Bayes-by-Backprop.

mod arch;
mod elbo;
mod forward;
mod params;
mod prior;
mod snapshot;
mod train;

pub use arch::{MlpArchitecture, DEPTH_GRID};
pub use elbo::{elbo_gradient, elbo_loss, ElboGradient, ElboTerms};
pub use forward::{forward_with_activations, predict_ensemble, softmax};
pub use params::{sigmoid, softplus, GaussianPosterior, LayerParams, WeightSet, INIT_MEAN_SD, INIT_RHO};
pub use prior::ScaleMixturePrior;
pub use snapshot::{ModelSnapshot, SNAPSHOT_FORMAT_VERSION};
pub use train::{accuracy, train, EpochMetrics, TrainConfig, TrainOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BnnError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}
