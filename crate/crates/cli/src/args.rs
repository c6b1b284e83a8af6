use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixdens::estimator::{Estimator, EstimatorKind};
use mixdens::simulate::Scenario;
use mixdens::{Error, KernelSpec, Result};

/// Mixing-density estimation from known-kernel mixtures.
#[derive(Debug, Parser)]
#[command(name = "mixdens", version)]
pub struct Cli {
    /// JSON file of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a data set from a built-in scenario.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Estimate the mixing density of a data CSV.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Posterior means and credible intervals under a fitted density.
    #[command(args_override_self = true)]
    Posterior(PosteriorArgs),
    /// Compare a fitted density with a known truth.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Credible-interval coverage over simulated replicates.
    #[command(args_override_self = true)]
    Coverage(CoverageArgs),
    /// K-fold predictive log-likelihood.
    #[command(args_override_self = true)]
    Cv(CvArgs),
    /// Neural-g accuracy across network depths and widths.
    #[command(args_override_self = true)]
    Sensitivity(SensitivityArgs),
}

/// Comma-separated list given as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|_| format!("'{p}' is not a valid list entry")))
            .collect::<std::result::Result<Vec<T>, String>>()
            .map(List)
    }
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_estimator(s: &str) -> std::result::Result<EstimatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    /// Master seed; falls back to MIXDENS_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SeedArgs {
    pub fn resolve(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("MIXDENS_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("MIXDENS_SEED must be an unsigned integer, got '{v}'"))),
            Err(_) => Ok(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelFamily {
    /// y ~ N(θ, σ²)
    Normal,
    /// y ~ Poisson(θ)
    Poisson,
    /// log y ~ N(θ, σ²)
    Lognormal,
    /// paired replicates ~ N(μ, σ²), θ = (μ, σ²)
    NormalLs,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Likelihood family; paired data default to normal-ls, others to normal.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelFamily>,
    /// Known noise standard deviation for normal and lognormal kernels.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

impl KernelArgs {
    /// Kernel for data with `width` values per observation.
    pub fn resolve(&self, width: usize) -> Result<KernelSpec> {
        let family = self
            .kernel
            .unwrap_or(if width == 2 { KernelFamily::NormalLs } else { KernelFamily::Normal });
        let spec = match family {
            KernelFamily::Normal => KernelSpec::NormalLocation { sigma: self.sigma },
            KernelFamily::Poisson => KernelSpec::Poisson,
            KernelFamily::Lognormal => KernelSpec::LogNormal { sigma: self.sigma },
            KernelFamily::NormalLs => KernelSpec::NormalLocationScale { replicates: 2 },
        };
        if spec.obs_dim() != width {
            return Err(Error::InvalidInput(format!(
                "kernel {family:?} expects {} value(s) per observation, the data have {width}",
                spec.obs_dim()
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn family_name(spec: &KernelSpec) -> &'static str {
        match spec {
            KernelSpec::NormalLocation { .. } => "normal",
            KernelSpec::Poisson => "poisson",
            KernelSpec::LogNormal { .. } => "lognormal",
            KernelSpec::NormalLocationScale { .. } => "normal-ls",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Number of support points (default 100, or 50 for paired data).
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Lower end of an equispaced univariate grid (needs --grid-hi).
    #[arg(long, requires = "grid_hi", allow_negative_numbers = true)]
    pub grid_lo: Option<f64>,
    /// Upper end of an equispaced univariate grid (needs --grid-lo).
    #[arg(long, requires = "grid_lo", allow_negative_numbers = true)]
    pub grid_hi: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// neuralg, npmle or efron.
    #[arg(long, default_value = "neuralg", value_parser = parse_estimator)]
    pub estimator: EstimatorKind,
    /// Neural-g hidden layers L.
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    /// Neural-g hidden width h.
    #[arg(long)]
    pub hidden_width: Option<usize>,
    /// Minibatch size S (default ceil(n/10) capped at 512).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch budget E.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Weight w on the current gradient.
    #[arg(long)]
    pub weight: Option<f64>,
    /// Base step size η.
    #[arg(long)]
    pub step: Option<f64>,
    /// Step-size decay exponent.
    #[arg(long)]
    pub step_decay: Option<f64>,
    /// Absolute loss change over the lag that stops training.
    #[arg(long)]
    pub stop_tol: Option<f64>,
    /// Iteration lag c of the stopping rule.
    #[arg(long)]
    pub stop_lag: Option<usize>,
    /// NPMLE iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// NPMLE negative log-likelihood tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Efron spline degrees of freedom p.
    #[arg(long)]
    pub df: Option<usize>,
    /// Efron penalty λ.
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl EstimatorArgs {
    /// Defaults for the chosen estimator with any given flags applied. Flags that
    /// belong to another estimator are ignored so one config file can serve all three.
    pub fn build(&self, seed: u64) -> Estimator {
        match Estimator::default_for(self.estimator, seed) {
            Estimator::NeuralG(mut s) => {
                if let Some(v) = self.hidden_layers {
                    s.hidden_layers = v;
                }
                if let Some(v) = self.hidden_width {
                    s.hidden_width = v;
                }
                if self.batch_size.is_some() {
                    s.batch_size = self.batch_size;
                }
                if let Some(v) = self.max_epochs {
                    s.max_epochs = v;
                }
                if let Some(v) = self.weight {
                    s.weight = v;
                }
                if let Some(v) = self.step {
                    s.base_step = v;
                }
                if let Some(v) = self.step_decay {
                    s.step_decay = v;
                }
                if let Some(v) = self.stop_tol {
                    s.stop_tol = v;
                }
                if let Some(v) = self.stop_lag {
                    s.stop_lag = v;
                }
                Estimator::NeuralG(s)
            }
            Estimator::Npmle { max_iters, tol } => Estimator::Npmle {
                max_iters: self.max_iters.unwrap_or(max_iters),
                tol: self.tol.unwrap_or(tol),
            },
            Estimator::Efron { df, lambda } => Estimator::Efron {
                df: self.df.unwrap_or(df),
                lambda: self.lambda.unwrap_or(lambda),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario name.
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,
    /// Number of observations.
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the latent θ columns.
    #[arg(long)]
    pub with_truth: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Data CSV with a 'y' column or 'y1,y2' columns.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Paired data: fit the pair means under a common error variance. The variance is
    /// estimated from the pair differences unless --error-sd is given.
    #[arg(long)]
    pub homogeneous: bool,
    /// Known replicate error standard deviation for --homogeneous.
    #[arg(long, requires = "homogeneous")]
    pub error_sd: Option<f64>,
    /// Density CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Training trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Model JSON; its "config" object can be passed back through --config.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    /// Univariate data CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Density CSV from `fit`.
    #[arg(long)]
    pub density: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Credible level of the equal-tailed intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Density CSV from `fit`.
    #[arg(long)]
    pub density: PathBuf,
    /// Built-in scenario whose prior and kernel are the truth.
    #[arg(long, value_parser = parse_scenario, conflicts_with = "truth")]
    pub scenario: Option<Scenario>,
    /// JSON truth: a prior object, or {"prior": ..., "kernel": ...}.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Data CSV; enables the posterior-mean and count-fit metrics.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the truth's kernel.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelFamily>,
    /// Noise standard deviation used with --kernel.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Estimator name recorded in the output.
    #[arg(long)]
    pub label: Option<String>,
    /// Seed recorded in the output.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics JSON (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, default_value = "gaussian", value_parser = parse_scenario)]
    pub scenario: Scenario,
    /// Sample sizes, comma separated.
    #[arg(long, default_value = "1000")]
    pub n: List<usize>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Grid size (default per scenario).
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Worker threads for replicates.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Number of folds.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long, default_value = "uniform", value_parser = parse_scenario)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Hidden-layer counts L, comma separated.
    #[arg(long, default_value = "1,4")]
    pub layers: List<usize>,
    /// Hidden widths h, comma separated.
    #[arg(long, default_value = "500")]
    pub widths: List<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
