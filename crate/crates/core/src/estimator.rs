//! One entry point over the three estimators of the mixing distribution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{efron_fit, npmle_em, spline_basis, EfronFit, EfronSettings, NpmleFit, NPMLE_MAX_ITERS, NPMLE_TOL};
use crate::density::{build_kernel_matrix, Grid, KernelMatrix, KernelSpec, MixingPmf, Observations};
use crate::error::{Error, Result};
use crate::mlp::MlpArchitecture;
use crate::multivariate::BivariateStandardizer;
use crate::optimizer::{default_batch_size, fit_neural_g_with_inputs, NeuralGFit, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    NeuralG,
    Npmle,
    Efron,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::NeuralG => "neuralg",
            EstimatorKind::Npmle => "npmle",
            EstimatorKind::Efron => "efron",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neuralg" | "neural-g" | "neural_g" => Ok(EstimatorKind::NeuralG),
            "npmle" => Ok(EstimatorKind::Npmle),
            "efron" => Ok(EstimatorKind::Efron),
            _ => Err(Error::InvalidInput(format!(
                "unknown estimator '{s}'; valid names: neuralg, npmle, efron"
            ))),
        }
    }
}

/// Neural-g settings with the batch size left open until `n` is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralGSettings {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// `None` means `⌈n/10⌉` capped at 512.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub weight: f64,
    pub base_step: f64,
    pub step_decay: f64,
    pub stop_tol: f64,
    pub stop_lag: usize,
    pub seed: u64,
}

impl NeuralGSettings {
    pub fn defaults(seed: u64) -> Self {
        let d = TrainConfig::defaults_for(1, seed);
        NeuralGSettings {
            hidden_layers: 4,
            hidden_width: 500,
            batch_size: None,
            max_epochs: d.max_epochs,
            weight: d.weight,
            base_step: d.base_step,
            step_decay: d.step_decay,
            stop_tol: d.stop_tol,
            stop_lag: d.stop_lag,
            seed,
        }
    }

    pub fn train_config(&self, n: usize) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size.unwrap_or_else(|| default_batch_size(n)),
            max_epochs: self.max_epochs,
            weight: self.weight,
            base_step: self.base_step,
            step_decay: self.step_decay,
            stop_tol: self.stop_tol,
            stop_lag: self.stop_lag,
            seed: self.seed,
            loss_every: 1,
        }
    }

    pub fn architecture(&self, grid: &Grid) -> Result<MlpArchitecture> {
        MlpArchitecture::new(grid.dim(), self.hidden_layers, self.hidden_width, grid.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    NeuralG(NeuralGSettings),
    Npmle { max_iters: usize, tol: f64 },
    /// Spline degrees of freedom `p` and penalty `λ`.
    Efron { df: usize, lambda: f64 },
}

impl Estimator {
    pub fn neural_g(seed: u64) -> Self {
        Estimator::NeuralG(NeuralGSettings::defaults(seed))
    }

    pub fn npmle() -> Self {
        Estimator::Npmle {
            max_iters: NPMLE_MAX_ITERS,
            tol: NPMLE_TOL,
        }
    }

    /// `p = 5`, `λ = 1`.
    pub fn efron() -> Self {
        Estimator::Efron { df: 5, lambda: 1.0 }
    }

    pub fn default_for(kind: EstimatorKind, seed: u64) -> Self {
        match kind {
            EstimatorKind::NeuralG => Self::neural_g(seed),
            EstimatorKind::Npmle => Self::npmle(),
            EstimatorKind::Efron => Self::efron(),
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            Estimator::NeuralG(_) => EstimatorKind::NeuralG,
            Estimator::Npmle { .. } => EstimatorKind::Npmle,
            Estimator::Efron { .. } => EstimatorKind::Efron,
        }
    }

    /// Same estimator with its seed replaced; deterministic estimators are unchanged.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            Estimator::NeuralG(s) => Estimator::NeuralG(NeuralGSettings { seed, ..*s }),
            other => other.clone(),
        }
    }

    /// Fits on a precomputed kernel. Neural-g sees raw grid coordinates, which is the
    /// univariate setup; use [`Estimator::fit_data`] for bivariate grids.
    pub fn fit(&self, kernel: &KernelMatrix, grid: &Grid) -> Result<Fitted> {
        self.fit_with_inputs(kernel, grid, None)
    }

    /// Builds the kernel and fits. Bivariate neural-g fits use standardized inputs
    /// fitted on `data`.
    pub fn fit_data(&self, spec: &KernelSpec, data: &Observations, grid: &Grid) -> Result<Fitted> {
        if data.is_empty() {
            return Err(Error::InvalidInput("no observations".into()));
        }
        let kernel = build_kernel_matrix(spec, data, grid)?;
        let inputs = match (self, grid.dim()) {
            (Estimator::NeuralG(_), 2) => Some(BivariateStandardizer::fit(data)?.inputs(grid)?),
            _ => None,
        };
        self.fit_with_inputs(&kernel, grid, inputs)
    }

    fn fit_with_inputs(&self, kernel: &KernelMatrix, grid: &Grid, inputs: Option<ndarray::Array2<f64>>) -> Result<Fitted> {
        match self {
            Estimator::NeuralG(s) => {
                let arch = s.architecture(grid)?;
                let cfg = s.train_config(kernel.nrows());
                let inputs = inputs.unwrap_or_else(|| grid.to_matrix());
                Ok(Fitted::NeuralG(Box::new(fit_neural_g_with_inputs(kernel, grid, &inputs, &arch, &cfg)?)))
            }
            Estimator::Npmle { max_iters, tol } => Ok(Fitted::Npmle(npmle_em(kernel, grid, *max_iters, *tol)?)),
            Estimator::Efron { df, lambda } => {
                if grid.dim() != 1 {
                    return Err(Error::InvalidInput("Efron's g needs a univariate grid".into()));
                }
                let basis = spline_basis(grid, *df)?;
                Ok(Fitted::Efron(efron_fit(kernel, grid, &basis, *lambda, EfronSettings::default())?))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fitted {
    NeuralG(Box<NeuralGFit>),
    Npmle(NpmleFit),
    Efron(EfronFit),
}

impl Fitted {
    pub fn pmf(&self) -> &MixingPmf {
        match self {
            Fitted::NeuralG(f) => &f.pmf,
            Fitted::Npmle(f) => &f.pmf,
            Fitted::Efron(f) => &f.pmf,
        }
    }

    pub fn into_pmf(self) -> MixingPmf {
        match self {
            Fitted::NeuralG(f) => f.pmf,
            Fitted::Npmle(f) => f.pmf,
            Fitted::Efron(f) => f.pmf,
        }
    }
}
