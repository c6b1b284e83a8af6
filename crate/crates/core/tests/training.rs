use mixdens::estimator::Estimator;
use mixdens::optimizer::{StopReason, INIT_STREAM};
use mixdens::rng::derive_seed;
use mixdens::simulate::{default_grid_for, generate, sample_response, Scenario, ScenarioSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use mixdens::*;

fn point_mass_data() -> (Observations, Grid, KernelSpec) {
    // 50 draws of y ~ N(0, 0.5²), i.e. a point-mass prior at 0.
    let spec = KernelSpec::NormalLocation { sigma: 0.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let y: Vec<f64> = (0..50).map(|_| sample_response(&spec, &[0.0], &mut rng)[0]).collect();
    let grid = Grid::equispaced(-1.5, 1.5, 31).unwrap();
    (Observations::univariate(&y), grid, spec)
}

#[test]
fn point_mass_prior_is_recovered() {
    let (data, grid, spec) = point_mass_data();
    let arch = MlpArchitecture::new(1, 2, 16, grid.len()).unwrap();
    let cfg = TrainConfig {
        base_step: 0.05,
        stop_tol: 1e-7,
        max_epochs: 3000,
        ..TrainConfig::defaults_for(50, 3)
    };
    let fit = train_neural_g(&data, &spec, &grid, &arch, &cfg).unwrap();
    // Grid index 15 is θ = 0; its neighbours are 14 and 16.
    let near: f64 = fit.pmf.weights()[14..=16].iter().sum();

    let kernel = build_kernel_matrix(&spec, &data, &grid).unwrap();
    let npmle = mixdens::baselines::npmle_em(&kernel, &grid, 5000, 1e-12).unwrap();
    let npmle_near: f64 = npmle.pmf.weights()[14..=16].iter().sum();
    assert!(npmle_near >= 0.95, "oracle mass {npmle_near}");
    assert!(near >= 0.95, "mass near zero {near}");
}

#[test]
fn training_is_deterministic() {
    let (data, grid, spec) = point_mass_data();
    let arch = MlpArchitecture::new(1, 2, 16, grid.len()).unwrap();
    let cfg = TrainConfig::defaults_for(50, 11);
    let a = train_neural_g(&data, &spec, &grid, &arch, &cfg).unwrap();
    let b = train_neural_g(&data, &spec, &grid, &arch, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.pmf.weights(), b.pmf.weights());
    assert_eq!(a.model.to_json(), b.model.to_json());
}

#[test]
fn one_epoch_budget_is_respected() {
    let sim = generate(&ScenarioSpec::new(Scenario::Gaussian, 500, 1).unwrap()).unwrap();
    let grid = default_grid_for(&sim.kernel, &sim.data.column(0), 30).unwrap();
    let arch = MlpArchitecture::new(1, 2, 16, grid.len()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 1,
        stop_tol: 1e9,
        ..TrainConfig::defaults_for(500, 1)
    };
    let batches = 500usize.div_ceil(cfg.batch_size);
    let fit = train_neural_g(&sim.data, &sim.kernel, &grid, &arch, &cfg).unwrap();
    assert!(fit.trace.len() <= batches && fit.iterations <= batches);
    assert_eq!(fit.epochs, 1);
    // Either the rule fired (only possible after c iterations) or the epoch ran out.
    match fit.stop {
        StopReason::Converged => assert!(fit.iterations > cfg.stop_lag),
        StopReason::EpochBudget => assert_eq!(fit.iterations, batches),
    }
}

#[test]
fn full_batch_unit_weight_is_plain_gradient_descent() {
    let sim = generate(&ScenarioSpec::new(Scenario::Piecewise, 40, 2).unwrap()).unwrap();
    let grid = default_grid_for(&sim.kernel, &sim.data.column(0), 12).unwrap();
    let kernel = build_kernel_matrix(&sim.kernel, &sim.data, &grid).unwrap();
    let arch = MlpArchitecture::new(1, 2, 8, grid.len()).unwrap();
    let steps = 25;
    let cfg = TrainConfig {
        batch_size: 40,
        max_epochs: steps,
        weight: 1.0,
        base_step: 0.05,
        step_decay: 0.0,
        stop_tol: 1e-300,
        stop_lag: 10,
        seed: 4,
        loss_every: 1,
    };
    let fit = mixdens::optimizer::fit_neural_g(&kernel, &grid, &arch, &cfg).unwrap();
    assert_eq!(fit.iterations, steps);

    let mut model = MlpModel::init(arch, derive_seed(cfg.seed, INIT_STREAM)).unwrap();
    for _ in 0..steps {
        let (_, g) = model.loss_and_gradient(&kernel, &grid).unwrap();
        let mut flat = model.params().to_flat();
        for (p, gi) in flat.iter_mut().zip(g.to_flat()) {
            *p -= cfg.base_step * gi;
        }
        model.params_mut().set_flat(&flat);
    }
    let ours = fit.model.params().to_flat();
    let gd = model.params().to_flat();
    let scale = gd.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for (a, b) in ours.iter().zip(&gd) {
        assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
    }
}

#[test]
fn default_training_improves_on_uniform_for_all_generators() {
    for (k, scenario) in [
        Scenario::Uniform,
        Scenario::Piecewise,
        Scenario::Gumbel,
        Scenario::Bounded,
        Scenario::Pointmass,
        Scenario::Gaussian,
    ]
    .into_iter()
    .enumerate()
    {
        let sim = generate(&ScenarioSpec::new(scenario, 500, 100 + k as u64).unwrap()).unwrap();
        let grid = default_grid_for(&sim.kernel, &sim.data.column(0), 100).unwrap();
        let Estimator::NeuralG(s) = Estimator::neural_g(7) else { unreachable!() };
        let arch = s.architecture(&grid).unwrap();
        let fit = train_neural_g(&sim.data, &sim.kernel, &grid, &arch, &s.train_config(500)).unwrap();
        assert!(fit.final_loss() <= fit.initial_loss, "{scenario}: {} > {}", fit.final_loss(), fit.initial_loss);
        let satisfied = match fit.stop {
            StopReason::Converged => fit.iterations > s.stop_lag,
            StopReason::EpochBudget => fit.epochs == s.max_epochs,
        };
        assert!(satisfied, "{scenario}: {:?}", fit.stop);
    }
}
