use std::time::Instant;

use mixdens::baselines::NpmleFit;
use mixdens::estimator::{Estimator, Fitted};
use mixdens::harness::{coverage_table, default_grid_size, sensitivity_table};
use mixdens::measurement_error::{fit_homogeneous, fit_homogeneous_known, pair_means};
use mixdens::metrics::{
    bayes_mae, chi2_mae, count_histogram, cv_pll, true_posterior_means, w1_distance, FoldPlan, MetricsRecord, TruePrior,
};
use mixdens::multivariate::select_grid_bivariate;
use mixdens::posterior::{credible_interval, posterior_mean, posterior_pmf};
use mixdens::simulate::{default_grid_for, generate, ScenarioSpec};
use mixdens::{build_kernel_matrix, Error, Grid, KernelSpec, MixingPmf, Observations, Result};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::args::{
    Command, CoverageArgs, CvArgs, EvaluateArgs, FitArgs, GridArgs, KernelArgs, PosteriorArgs, SensitivityArgs,
    SimulateArgs,
};
use crate::io::{data_table, density_table, emit, read_data, read_density, read_text, Table};

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Posterior(a) => posterior(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Coverage(a) => coverage(a),
        Command::Cv(a) => cv(a),
        Command::Sensitivity(a) => sensitivity(a),
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let sim = generate(&ScenarioSpec::new(a.scenario, a.n, a.seed.resolve()?)?)?;
    let table = data_table(&sim.data, a.with_truth.then_some(sim.thetas.as_slice()));
    emit(Some(&a.out), &table.to_csv()?)
}

/// Grid for univariate `y` (already on the data scale of `kernel`).
fn univariate_grid(g: &GridArgs, kernel: &KernelSpec, y: &[f64]) -> Result<Grid> {
    let m = g.grid_size.unwrap_or(100);
    match (g.grid_lo, g.grid_hi) {
        (Some(lo), Some(hi)) => Grid::equispaced(lo, hi, m),
        _ => default_grid_for(kernel, y, m),
    }
}

/// Grid for any data set: k-means selection for pairs, otherwise equispaced.
fn data_grid(g: &GridArgs, kernel: &KernelSpec, data: &Observations, seed: u64) -> Result<Grid> {
    if data.width() == 2 {
        if g.grid_lo.is_some() {
            return Err(Error::InvalidInput("--grid-lo/--grid-hi apply to univariate data only".into()));
        }
        let sel = select_grid_bivariate(data, g.grid_size.unwrap_or(50), seed)?;
        if let Some(w) = sel.warning {
            eprintln!("warning: {w}");
        }
        Ok(sel.grid)
    } else {
        univariate_grid(g, kernel, &data.column(0))
    }
}

fn fit(a: &FitArgs) -> Result<()> {
    let seed = a.seed.resolve()?;
    let data = read_data(&a.data)?;
    let est = a.estimator.build(seed);
    let mut config = estimator_config(&est);
    config.insert("seed".into(), json!(seed));
    let mut result = Map::new();

    let start = Instant::now();
    let (fitted, kernel) = if a.homogeneous {
        if data.width() != 2 {
            return Err(Error::InvalidInput("--homogeneous needs paired 'y1,y2' data".into()));
        }
        let grid = univariate_grid(&a.grid, &KernelSpec::NormalLocation { sigma: 1.0 }, &pair_means(&data)?)?;
        let hf = match a.error_sd {
            Some(sd) => fit_homogeneous_known(&data, &grid, &est, sd * sd)?,
            None => fit_homogeneous(&data, &grid, &est)?,
        };
        config.insert("homogeneous".into(), json!(true));
        if let Some(sd) = a.error_sd {
            config.insert("error_sd".into(), json!(sd));
        }
        result.insert("error_variance".into(), json!(hf.sigma2));
        (hf.fit, hf.kernel)
    } else {
        let kernel = a.kernel.resolve(data.width())?;
        let grid = data_grid(&a.grid, &kernel, &data, seed)?;
        config.insert("kernel".into(), json!(KernelArgs::family_name(&kernel)));
        if let KernelSpec::NormalLocation { sigma } | KernelSpec::LogNormal { sigma } = kernel {
            config.insert("sigma".into(), json!(sigma));
        }
        (est.fit_data(&kernel, &data, &grid)?, kernel)
    };
    let elapsed = start.elapsed().as_secs_f64();

    let pmf = fitted.pmf();
    config.insert("grid_size".into(), json!(pmf.len()));
    if let (Some(lo), Some(hi)) = (a.grid.grid_lo, a.grid.grid_hi) {
        config.insert("grid_lo".into(), json!(lo));
        config.insert("grid_hi".into(), json!(hi));
    }
    emit(Some(&a.out), &density_table(pmf).to_csv()?)?;
    if let Some(path) = &a.trace {
        emit(Some(path), &trace_table(&fitted).to_csv()?)?;
    }
    if let Some(path) = &a.model {
        result.insert("estimator".into(), json!(est.kind().name()));
        result.insert("kernel".into(), serde_json::to_value(kernel)?);
        result.insert("n".into(), json!(data.len()));
        result.insert("m".into(), json!(pmf.len()));
        describe_fit(&fitted, &mut result)?;
        result.insert("elapsed_seconds".into(), json!(elapsed));
        let doc = json!({ "config": config, "result": result });
        emit(Some(path), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    Ok(())
}

/// The flags that rebuild `est`, keyed as in a config file.
fn estimator_config(est: &Estimator) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("estimator".into(), json!(est.kind().name()));
    match est {
        Estimator::NeuralG(s) => {
            m.insert("hidden_layers".into(), json!(s.hidden_layers));
            m.insert("hidden_width".into(), json!(s.hidden_width));
            if let Some(b) = s.batch_size {
                m.insert("batch_size".into(), json!(b));
            }
            m.insert("max_epochs".into(), json!(s.max_epochs));
            m.insert("weight".into(), json!(s.weight));
            m.insert("step".into(), json!(s.base_step));
            m.insert("step_decay".into(), json!(s.step_decay));
            m.insert("stop_tol".into(), json!(s.stop_tol));
            m.insert("stop_lag".into(), json!(s.stop_lag));
        }
        Estimator::Npmle { max_iters, tol } => {
            m.insert("max_iters".into(), json!(max_iters));
            m.insert("tol".into(), json!(tol));
        }
        Estimator::Efron { df, lambda } => {
            m.insert("df".into(), json!(df));
            m.insert("lambda".into(), json!(lambda));
        }
    }
    m
}

fn describe_fit(fitted: &Fitted, out: &mut Map<String, Value>) -> Result<()> {
    match fitted {
        Fitted::NeuralG(f) => {
            out.insert("initial_loss".into(), json!(f.initial_loss));
            out.insert("final_loss".into(), json!(f.final_loss()));
            out.insert("iterations".into(), json!(f.iterations));
            out.insert("epochs".into(), json!(f.epochs));
            out.insert("stop".into(), serde_json::to_value(f.stop)?);
            out.insert("network".into(), serde_json::from_str(&f.model.to_json())?);
        }
        Fitted::Npmle(f) => {
            out.insert("iterations".into(), json!(f.iterations));
            out.insert("converged".into(), json!(f.converged));
            out.insert("final_nll".into(), json!(f.final_nll()));
        }
        Fitted::Efron(f) => {
            out.insert("alpha".into(), json!(f.params.alpha));
            out.insert("lambda".into(), json!(f.params.lambda));
            out.insert("objective".into(), json!(f.objective));
            out.insert("iterations".into(), json!(f.iterations));
            out.insert("converged".into(), json!(f.converged));
        }
    }
    Ok(())
}

/// Neural-g writes one row per optimizer step and NPMLE one row per accelerated EM
/// cycle (epoch 0). Efron's g has no trace, so its file holds only the header.
fn trace_table(fitted: &Fitted) -> Table {
    let mut t = Table::new(&["iteration", "epoch", "full_loss"]);
    match fitted {
        Fitted::NeuralG(f) => {
            for r in &f.trace {
                t.rows.push(vec![r.iteration as f64, r.epoch as f64, r.full_loss]);
            }
        }
        Fitted::Npmle(NpmleFit { nll_trace, .. }) => {
            for (i, v) in nll_trace.iter().enumerate() {
                t.rows.push(vec![(i + 1) as f64, 0.0, *v]);
            }
        }
        Fitted::Efron(_) => {}
    }
    t
}

fn posterior(a: &PosteriorArgs) -> Result<()> {
    let data = read_data(&a.data)?;
    if data.width() != 1 {
        return Err(Error::InvalidInput("posterior summaries need univariate 'y' data".into()));
    }
    let kernel = a.kernel.resolve(1)?;
    let pmf = read_density(&a.density)?;
    let post = posterior_pmf(&build_kernel_matrix(&kernel, &data, pmf.grid())?, &pmf)?;
    let means = posterior_mean(&post)?;
    let intervals = credible_interval(&post, a.level)?;
    let mut t = Table::new(&["i", "y", "post_mean", "lo", "hi"]);
    for (i, (m, (lo, hi))) in means.iter().zip(intervals).enumerate() {
        t.rows.push(vec![(i + 1) as f64, data.row(i)[0], *m, lo, hi]);
    }
    emit(a.out.as_deref(), &t.to_csv()?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    prior: TruePrior,
    kernel: Option<KernelSpec>,
}

fn load_truth(a: &EvaluateArgs) -> Result<(TruePrior, Option<KernelSpec>)> {
    if let Some(s) = a.scenario {
        return Ok((s.true_prior(), Some(s.kernel())));
    }
    let Some(path) = &a.truth else {
        return Err(Error::InvalidInput("evaluate needs --scenario or --truth".into()));
    };
    let value: Value = serde_json::from_str(&read_text(path)?)?;
    if value.get("prior").is_some() {
        let t: TruthFile = serde_json::from_value(value)?;
        Ok((t.prior, t.kernel))
    } else {
        Ok((serde_json::from_value(value)?, None))
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let (truth, truth_kernel) = load_truth(a)?;
    truth.validate()?;
    let pmf = read_density(&a.density)?;
    let (w1, w1_cell) = if truth.dim() == 1 && pmf.grid().dim() == 1 {
        let w = w1_distance(&pmf, &truth)?;
        (Some(w.value), Some(w.cell_width))
    } else {
        (None, None)
    };
    let mut mae = None;
    let mut chi2 = None;
    let mut n = 0;
    if let Some(path) = &a.data {
        let data = read_data(path)?;
        n = data.len();
        let kernel = match (a.kernel, truth_kernel) {
            (Some(family), _) => KernelArgs {
                kernel: Some(family),
                sigma: a.sigma,
            }
            .resolve(data.width())?,
            (None, Some(k)) => k,
            (None, None) => KernelArgs { kernel: None, sigma: a.sigma }.resolve(data.width())?,
        };
        if data.width() == 1 && pmf.grid().dim() == 1 && truth.dim() == 1 {
            mae = Some(estimated_vs_true_mae(&pmf, &truth, &kernel, &data)?);
        }
        if kernel == KernelSpec::Poisson {
            chi2 = Some(chi2_mae(&count_histogram(&data.column(0)), &pmf, &kernel, n as f64)?);
        }
    }
    let record = MetricsRecord {
        w1,
        w1_cell,
        mae,
        chi2_mae: chi2,
        pll: None,
        n,
        m: pmf.len(),
        seed: a.seed,
        estimator: a.label.clone(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&record)? + "\n"))
}

fn estimated_vs_true_mae(pmf: &MixingPmf, truth: &TruePrior, kernel: &KernelSpec, data: &Observations) -> Result<f64> {
    let est = posterior_mean(&posterior_pmf(&build_kernel_matrix(kernel, data, pmf.grid())?, pmf)?)?;
    let exact: Vec<f64> = true_posterior_means(truth, kernel, data)?.into_iter().map(|r| r[0]).collect();
    bayes_mae(&est, &exact)
}

fn coverage(a: &CoverageArgs) -> Result<()> {
    let seed = a.seed.resolve()?;
    let est = a.estimator.build(seed);
    let m = a.grid_size.unwrap_or_else(|| default_grid_size(a.scenario));
    let (rows, _) = coverage_table(a.scenario, &a.n.0, a.reps, &est, m, seed, a.jobs)?;
    let mut t = Table::new(&["n", "ecp_mean", "width_mean"]);
    for r in rows {
        t.rows.push(vec![r.n as f64, r.ecp_mean, r.width_mean]);
    }
    emit(a.out.as_deref(), &t.to_csv()?)
}

fn cv(a: &CvArgs) -> Result<()> {
    let start = Instant::now();
    let seed = a.seed.resolve()?;
    let data = read_data(&a.data)?;
    let kernel = a.kernel.resolve(data.width())?;
    let plan = FoldPlan::new(data.len(), a.k, seed)?;
    let grid = data_grid(&a.grid, &kernel, &data, seed)?;
    let est = a.estimator.build(seed);
    let report = cv_pll(
        &data,
        &kernel,
        &grid,
        |train| Ok(est.fit_data(&kernel, train, &grid)?.into_pmf()),
        &plan,
    )?;
    let chi2 = if kernel == KernelSpec::Poisson {
        let full = est.fit_data(&kernel, &data, &grid)?.into_pmf();
        Some(chi2_mae(&count_histogram(&data.column(0)), &full, &kernel, data.len() as f64)?)
    } else {
        None
    };
    let record = MetricsRecord {
        w1: None,
        w1_cell: None,
        mae: None,
        chi2_mae: chi2,
        pll: Some(report.pll),
        n: data.len(),
        m: grid.len(),
        seed: Some(seed),
        estimator: Some(est.kind().name().to_string()),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&record)? + "\n"))
}

fn sensitivity(a: &SensitivityArgs) -> Result<()> {
    let seed = a.seed.resolve()?;
    let est = a.estimator.build(seed);
    let m = a.grid_size.unwrap_or_else(|| default_grid_size(a.scenario));
    let rows = sensitivity_table(a.scenario, a.n, &a.layers.0, &a.widths.0, a.reps, &est, m, seed, a.jobs)?;
    let mut t = Table::new(&["L", "h", "w1_mean", "mae_mean"]);
    for r in rows {
        t.rows.push(vec![r.hidden_layers as f64, r.hidden_width as f64, r.w1_mean, r.mae_mean]);
    }
    emit(a.out.as_deref(), &t.to_csv()?)
}
