//! Seeded generators for the benchmark scenarios.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::density::{Grid, KernelSpec, Observations};
use crate::error::{Error, Result};
use crate::metrics::TruePrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `θ ~ U(−2, 2)`, `y | θ ~ N(θ, 1)`.
    Uniform,
    /// `0.4·U(−2,−1) + 0.2·U(−1,1) + 0.4·U(1,2)`, normal kernel.
    Piecewise,
    /// `θ ~ Gumbel(2, 1)`, normal kernel.
    Gumbel,
    /// `θ ~ Beta(3, 2)`, `log y | θ ~ N(θ, 0.2²)`.
    Bounded,
    /// Atoms at −5, 0, 5 with masses 0.3, 0.4, 0.3; `y | θ ~ N(θ, 0.5²)`.
    Pointmass,
    /// `θ ~ N(0, 1)`, normal kernel.
    Gaussian,
    /// `0.2·δ(0, 1) + 0.8·δ(2, 0.1)` over `(μ, σ²)`, two replicates.
    BiPointmass,
    /// Normal-inverse-gamma over `(μ, σ²)`, two replicates.
    BiNig,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Uniform,
        Scenario::Piecewise,
        Scenario::Gumbel,
        Scenario::Bounded,
        Scenario::Pointmass,
        Scenario::Gaussian,
        Scenario::BiPointmass,
        Scenario::BiNig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Uniform => "uniform",
            Scenario::Piecewise => "piecewise",
            Scenario::Gumbel => "gumbel",
            Scenario::Bounded => "bounded",
            Scenario::Pointmass => "pointmass",
            Scenario::Gaussian => "gaussian",
            Scenario::BiPointmass => "bi_pointmass",
            Scenario::BiNig => "bi_nig",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
    }

    pub fn is_bivariate(self) -> bool {
        matches!(self, Scenario::BiPointmass | Scenario::BiNig)
    }

    pub fn true_prior(self) -> TruePrior {
        match self {
            Scenario::Uniform => TruePrior::Uniform { lo: -2.0, hi: 2.0 },
            Scenario::Piecewise => TruePrior::PiecewiseConstant {
                pieces: vec![(-2.0, -1.0, 0.4), (-1.0, 1.0, 0.2), (1.0, 2.0, 0.4)],
            },
            Scenario::Gumbel => TruePrior::Gumbel { loc: 2.0, scale: 1.0 },
            Scenario::Bounded => TruePrior::Beta { a: 3.0, b: 2.0 },
            Scenario::Pointmass => TruePrior::Atoms {
                atoms: vec![(-5.0, 0.3), (0.0, 0.4), (5.0, 0.3)],
            },
            Scenario::Gaussian => TruePrior::Gaussian { mean: 0.0, sd: 1.0 },
            Scenario::BiPointmass => TruePrior::BiAtoms {
                atoms: vec![([0.0, 1.0], 0.2), ([2.0, 0.1], 0.8)],
            },
            Scenario::BiNig => TruePrior::Nig {
                mu0: 1.0,
                lambda: 1.0,
                shape: 2.0,
                scale: 0.5,
            },
        }
    }

    pub fn kernel(self) -> KernelSpec {
        match self {
            Scenario::Bounded => KernelSpec::LogNormal { sigma: 0.2 },
            Scenario::Pointmass => KernelSpec::NormalLocation { sigma: 0.5 },
            Scenario::BiPointmass | Scenario::BiNig => KernelSpec::NormalLocationScale { replicates: 2 },
            _ => KernelSpec::NormalLocation { sigma: 1.0 },
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario '{s}'; valid names: {}", Self::valid_names())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: Scenario,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(name: Scenario, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        Ok(ScenarioSpec { name, n, seed })
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Observations,
    /// One row per observation, one entry per coordinate of `θ`.
    pub thetas: Vec<Vec<f64>>,
    pub truth: TruePrior,
    pub kernel: KernelSpec,
}

impl Simulated {
    /// First coordinate of each `θ_i`.
    pub fn theta_column(&self) -> Vec<f64> {
        self.thetas.iter().map(|t| t[0]).collect()
    }
}

/// Draw `θ_i` from the scenario prior, then `y_i | θ_i` from its kernel.
pub fn generate(spec: &ScenarioSpec) -> Result<Simulated> {
    if spec.n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let truth = spec.name.true_prior();
    let kernel = spec.name.kernel();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut thetas = Vec::with_capacity(spec.n);
    let mut rows = Vec::with_capacity(spec.n * kernel.obs_dim());
    for _ in 0..spec.n {
        let theta = truth.sample(&mut rng);
        rows.extend(sample_response(&kernel, &theta, &mut rng));
        thetas.push(theta);
    }
    let data = Observations::from_matrix(
        ndarray::Array2::from_shape_vec((spec.n, kernel.obs_dim()), rows).expect("row-major fill"),
    );
    Ok(Simulated {
        data,
        thetas,
        truth,
        kernel,
    })
}

/// One response vector from `f(· | θ)`.
pub fn sample_response<R: Rng + ?Sized>(kernel: &KernelSpec, theta: &[f64], rng: &mut R) -> Vec<f64> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    match *kernel {
        KernelSpec::NormalLocation { sigma } => vec![theta[0] + sigma * std_normal.sample(rng)],
        KernelSpec::LogNormal { sigma } => vec![(theta[0] + sigma * std_normal.sample(rng)).exp()],
        KernelSpec::Poisson => {
            let rate = theta[0];
            if rate == 0.0 {
                vec![0.0]
            } else {
                vec![rand_distr::Poisson::new(rate).expect("positive rate").sample(rng)]
            }
        }
        KernelSpec::NormalLocationScale { replicates } => {
            let sd = theta[1].sqrt();
            (0..replicates).map(|_| theta[0] + sd * std_normal.sample(rng)).collect()
        }
    }
}

/// `m` equispaced points from `min(y)` to `max(y)` inclusive.
pub fn default_grid(data: &[f64], m: usize) -> Result<Grid> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("grid needs at least 2 points, got {m}")));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("no data to place a grid on".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("data contain non-finite values".into()));
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::Degenerate(format!("all observations equal {lo}; the grid range is empty")));
    }
    Grid::equispaced(lo, hi, m)
}

/// Default univariate grid on the scale of `θ`. The log-normal kernel puts `θ` on
/// the log scale of `y`, so its grid spans `[min log y, max log y]`.
pub fn default_grid_for(kernel: &KernelSpec, data: &[f64], m: usize) -> Result<Grid> {
    match kernel {
        KernelSpec::LogNormal { .. } => {
            if let Some(v) = data.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain(format!("log-normal observation must be positive, got {v}")));
            }
            let logs: Vec<f64> = data.iter().map(|v| v.ln()).collect();
            default_grid(&logs, m)
        }
        KernelSpec::NormalLocationScale { .. } => Err(Error::InvalidInput(
            "paired data need the bivariate grid selector".into(),
        )),
        _ => default_grid(data, m),
    }
}
