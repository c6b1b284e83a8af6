//! Nonparametric estimation of mixing distributions in empirical Bayes models.
//!
//! The central estimator ("neural-g") parameterizes a prior on a fixed grid by a
//! small network whose softmax output is the prior mass function, and fits it by
//! maximum marginal likelihood.

pub mod baselines;
pub mod density;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod measurement_error;
pub mod metrics;
pub mod mlp;
pub mod multivariate;
pub mod optimizer;
pub mod posterior;
pub mod rng;
pub mod simulate;

pub use density::{build_kernel_matrix, mixture_nll, Grid, KernelMatrix, KernelSpec, MixingPmf, Observations};
pub use error::{Error, Result};
pub use mlp::{MlpArchitecture, MlpModel};
pub use optimizer::{train_neural_g, NeuralGFit, TrainConfig};
