//! Predictive topological uncertainty (pTU) for mean-field Gaussian Bayesian
//! MLPs, and a permutation test on pTU samples for covariate-shift detection.
//!
//! The pipeline, bottom-up:
//!
//! * [`data`] loads IDX image datasets and applies the Gaussian shift and
//!   augmentation operators.
//! * [`bnn`] trains the Bayes-by-Backprop posterior and runs forward passes
//!   that keep every layer's activations.
//! * [`topology`] turns each layer into a weighted bipartite activation graph
//!   and reduces it to a zero-dimensional persistence diagram.
//! * [`otstats`] holds the closed-form 1-D Wasserstein distances and Fréchet
//!   statistics on equal-size diagrams.
//! * [`ptu`] estimates pTU per input and the model-level TU.
//! * [`oodtest`] runs the two-sample permutation test and power curves.
//! * [`stability`] computes the layer constants behind the Lipschitz bound of
//!   pTU and checks the bound empirically.

pub mod bnn;
pub mod data;
pub mod oodtest;
pub mod otstats;
pub mod parallel;
pub mod ptu;
pub mod rng;
pub mod stability;
pub mod topology;

use thiserror::Error;

/// Any error produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Bnn(#[from] bnn::BnnError),
    #[error(transparent)]
    Topology(#[from] topology::TopologyError),
    #[error(transparent)]
    Ot(#[from] otstats::OtError),
    #[error(transparent)]
    Ptu(#[from] ptu::PtuError),
    #[error(transparent)]
    Ood(#[from] oodtest::OodError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
