//! Seeded replications of simulate → fit → evaluate, and the coverage and
//! hyperparameter-sensitivity tables built from them.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{build_kernel_matrix, Grid, KernelSpec, MixingPmf, Observations};
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::metrics::{bayes_mae, true_posterior_means, w1_distance, TruePrior};
use crate::multivariate::{select_grid_bivariate, BivariateStandardizer};
use crate::posterior::{credible_interval, empirical_coverage, mean_width, posterior_mean, posterior_pmf};
use crate::rng::derive_seed;
use crate::simulate::{default_grid_for, generate, Scenario, ScenarioSpec, Simulated};

/// Grid size when none is given: 100 for univariate scenarios, 50 for bivariate ones.
pub fn default_grid_size(scenario: Scenario) -> usize {
    if scenario.is_bivariate() {
        50
    } else {
        100
    }
}

/// Seed of replicate `rep` under `master`; the same seed drives data and estimator.
pub fn replicate_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, rep as u64)
}

/// Default grid for simulated data: equispaced over the `θ` scale of the data for
/// univariate scenarios, k-means representatives for bivariate ones.
pub fn scenario_grid(sim: &Simulated, m: usize, seed: u64) -> Result<Grid> {
    match sim.kernel {
        KernelSpec::NormalLocationScale { .. } => Ok(select_grid_bivariate(&sim.data, m, seed)?.grid),
        _ => default_grid_for(&sim.kernel, &sim.data.column(0), m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub w1: f64,
    /// Integration cell width of the W1 rule (zero when exact).
    pub w1_cell: f64,
    pub mae: f64,
}

/// W1 to the true prior and MAE of the estimated posterior means against the true
/// posterior means.
pub fn evaluate_univariate(pmf: &MixingPmf, truth: &TruePrior, kernel: &KernelSpec, data: &Observations) -> Result<Evaluation> {
    let w1 = w1_distance(pmf, truth)?;
    let f = build_kernel_matrix(kernel, data, pmf.grid())?;
    let est = posterior_mean(&posterior_pmf(&f, pmf)?)?;
    let truth_means: Vec<f64> = true_posterior_means(truth, kernel, data)?.into_iter().map(|v| v[0]).collect();
    Ok(Evaluation {
        w1: w1.value,
        w1_cell: w1.cell_width,
        mae: bayes_mae(&est, &truth_means)?,
    })
}

/// Estimated mass within standardized distance `radius` of each atom.
pub fn mass_near_atoms(pmf: &MixingPmf, atoms: &[[f64; 2]], standardizer: &BivariateStandardizer, radius: f64) -> Vec<f64> {
    atoms
        .iter()
        .map(|atom| {
            let a = standardizer.transform(*atom);
            pmf.grid()
                .iter()
                .zip(pmf.weights())
                .filter(|(p, _)| {
                    let t = standardizer.transform([p[0], p[1]]);
                    ((t[0] - a[0]).powi(2) + (t[1] - a[1]).powi(2)).sqrt() <= radius
                })
                .map(|(_, w)| w)
                .sum()
        })
        .collect()
}

/// What to simulate and how to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub grid_size: usize,
    pub estimator: Estimator,
}

#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub sim: Simulated,
    pub pmf: MixingPmf,
    /// `None` for bivariate scenarios.
    pub evaluation: Option<Evaluation>,
    pub elapsed_seconds: f64,
}

pub fn run_replicate(spec: &RunSpec, master: u64, rep: usize) -> Result<RepOutcome> {
    let seed = replicate_seed(master, rep);
    let sim = generate(&ScenarioSpec::new(spec.scenario, spec.n, seed)?)?;
    let grid = scenario_grid(&sim, spec.grid_size, seed)?;
    let start = Instant::now();
    let pmf = spec.estimator.with_seed(seed).fit_data(&sim.kernel, &sim.data, &grid)?.into_pmf();
    let elapsed_seconds = start.elapsed().as_secs_f64();
    let evaluation = if spec.scenario.is_bivariate() {
        None
    } else {
        Some(evaluate_univariate(&pmf, &sim.truth, &sim.kernel, &sim.data)?)
    };
    Ok(RepOutcome {
        rep,
        seed,
        sim,
        pmf,
        evaluation,
        elapsed_seconds,
    })
}

/// Applies `f` to `0..count` on `jobs` worker threads, keeping results in index order.
pub fn par_map<T, F>(jobs: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs == 0 {
        return Err(Error::InvalidInput("jobs must be at least 1".into()));
    }
    if jobs == 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

pub fn run_replications(spec: &RunSpec, master: u64, reps: usize, jobs: usize) -> Result<Vec<RepOutcome>> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    par_map(jobs, reps, |r| run_replicate(spec, master, r))
}

/// Coverage of the 95% intervals and their mean width for one replicate.
pub fn coverage_replicate(spec: &RunSpec, master: u64, rep: usize, level: f64) -> Result<(f64, f64)> {
    if spec.scenario.is_bivariate() {
        return Err(Error::InvalidInput("coverage needs a univariate scenario".into()));
    }
    let out = run_replicate(spec, master, rep)?;
    let f = build_kernel_matrix(&out.sim.kernel, &out.sim.data, out.pmf.grid())?;
    let intervals = credible_interval(&posterior_pmf(&f, &out.pmf)?, level)?;
    Ok((empirical_coverage(&out.sim.theta_column(), &intervals)?, mean_width(&intervals)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub ecp_mean: f64,
    pub width_mean: f64,
}

/// Per-replicate `(ecp, width)` for each sample size, then the table of means.
pub fn coverage_table(
    scenario: Scenario,
    ns: &[usize],
    reps: usize,
    estimator: &Estimator,
    grid_size: usize,
    master: u64,
    jobs: usize,
) -> Result<(Vec<CoverageRow>, Vec<Vec<(f64, f64)>>)> {
    if reps == 0 || ns.is_empty() {
        return Err(Error::InvalidInput("need at least one sample size and one replicate".into()));
    }
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for &n in ns {
        let spec = RunSpec {
            scenario,
            n,
            grid_size,
            estimator: estimator.clone(),
        };
        let per = par_map(jobs, reps, |r| coverage_replicate(&spec, master, r, 0.95))?;
        let k = per.len() as f64;
        rows.push(CoverageRow {
            n,
            ecp_mean: per.iter().map(|p| p.0).sum::<f64>() / k,
            width_mean: per.iter().map(|p| p.1).sum::<f64>() / k,
        });
        raw.push(per);
    }
    Ok((rows, raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub w1_mean: f64,
    pub mae_mean: f64,
}

/// Neural-g over every `(L, h)` pair, averaging W1 and MAE over `reps` replicates.
/// Replicate `r` sees the same data for every architecture.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_table(
    scenario: Scenario,
    n: usize,
    layers: &[usize],
    widths: &[usize],
    reps: usize,
    base: &Estimator,
    grid_size: usize,
    master: u64,
    jobs: usize,
) -> Result<Vec<SensitivityRow>> {
    let Estimator::NeuralG(settings) = base else {
        return Err(Error::InvalidInput("sensitivity runs vary neural-g architectures".into()));
    };
    if scenario.is_bivariate() {
        return Err(Error::InvalidInput("sensitivity needs a univariate scenario".into()));
    }
    if reps == 0 || layers.is_empty() || widths.is_empty() {
        return Err(Error::InvalidInput("need reps >= 1 and nonempty L and h lists".into()));
    }
    let mut rows = Vec::new();
    for &l in layers {
        for &h in widths {
            let mut s = *settings;
            s.hidden_layers = l;
            s.hidden_width = h;
            let spec = RunSpec {
                scenario,
                n,
                grid_size,
                estimator: Estimator::NeuralG(s),
            };
            let evals: Vec<Evaluation> = run_replications(&spec, master, reps, jobs)?
                .into_iter()
                .map(|o| o.evaluation.expect("univariate"))
                .collect();
            let k = evals.len() as f64;
            rows.push(SensitivityRow {
                hidden_layers: l,
                hidden_width: h,
                w1_mean: evals.iter().map(|e| e.w1).sum::<f64>() / k,
                mae_mean: evals.iter().map(|e| e.mae).sum::<f64>() / k,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::NeuralGSettings;

    fn small_neural_g() -> Estimator {
        let mut s = NeuralGSettings::defaults(0);
        s.hidden_layers = 2;
        s.hidden_width = 16;
        s.max_epochs = 5;
        Estimator::NeuralG(s)
    }

    #[test]
    fn exact_truth_evaluates_to_zero_w1() {
        let sim = generate(&ScenarioSpec::new(Scenario::Pointmass, 200, 1).unwrap()).unwrap();
        let grid = Grid::univariate(vec![-5.0, 0.0, 5.0]).unwrap();
        let pmf = MixingPmf::new(grid, vec![0.3, 0.4, 0.3]).unwrap();
        let e = evaluate_univariate(&pmf, &sim.truth, &sim.kernel, &sim.data).unwrap();
        assert_eq!(e.w1, 0.0);
        assert!(e.mae < 1e-12);
    }

    #[test]
    fn replications_are_reproducible_and_job_independent() {
        let spec = RunSpec {
            scenario: Scenario::Uniform,
            n: 120,
            grid_size: 30,
            estimator: small_neural_g(),
        };
        let a = run_replications(&spec, 5, 3, 1).unwrap();
        let b = run_replications(&spec, 5, 3, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.pmf.weights(), y.pmf.weights());
            assert_eq!(x.evaluation.unwrap().w1, y.evaluation.unwrap().w1);
        }
        assert_ne!(a[0].sim.data.matrix(), a[1].sim.data.matrix());
        assert!(run_replications(&spec, 5, 0, 1).is_err());
    }

    #[test]
    fn table_shapes() {
        let (rows, raw) = coverage_table(Scenario::Gaussian, &[50, 80], 1, &Estimator::npmle(), 30, 2, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(raw[1].len(), 1);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.ecp_mean) && r.width_mean >= 0.0);
        }
        let sens = sensitivity_table(Scenario::Uniform, 100, &[1, 2], &[8], 2, &small_neural_g(), 20, 3, 1).unwrap();
        assert_eq!(sens.len(), 2);
        assert_eq!((sens[0].hidden_layers, sens[1].hidden_layers), (1, 2));
        assert!(sensitivity_table(Scenario::Uniform, 100, &[1], &[8], 0, &small_neural_g(), 20, 3, 1).is_err());
        assert!(sensitivity_table(Scenario::Uniform, 100, &[1], &[8], 1, &Estimator::npmle(), 20, 3, 1).is_err());
    }

    #[test]
    fn atom_mass_counts_nearby_points() {
        let data = Observations::paired(&[(0.0, 1.0), (2.0, 2.5), (1.0, 1.2), (-1.0, 0.5)]);
        let st = BivariateStandardizer::fit(&data).unwrap();
        let grid = Grid::from_points(2, &[vec![0.0, 1.0], vec![2.0, 0.1], vec![9.0, 9.0]]).unwrap();
        let pmf = MixingPmf::new(grid, vec![0.25, 0.7, 0.05]).unwrap();
        let m = mass_near_atoms(&pmf, &[[0.0, 1.0], [2.0, 0.1]], &st, 1e-9);
        assert_eq!(m, vec![0.25, 0.7]);
    }
}
