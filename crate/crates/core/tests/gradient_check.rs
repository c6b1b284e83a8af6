use mixdens::density::{Grid, KernelMatrix};
use mixdens::mlp::{MlpArchitecture, MlpModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(seed: u64) -> (MlpModel, Grid, KernelMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=2);
    let layers = rng.random_range(1..=2);
    let h = rng.random_range(2..=8);
    let m = rng.random_range(3..=10);
    let s = rng.random_range(1..=20);
    let mut points: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let grid = Grid::from_points(d, &points).unwrap();
    let arch = MlpArchitecture::new(d, layers, h, m).unwrap();
    let mut model = MlpModel::init(arch, seed).unwrap();
    // Nonzero output layer so that every parameter receives gradient.
    let mut flat = model.params().to_flat();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    model.params_mut().set_flat(&flat);
    let f = Array2::from_shape_fn((s, m), |_| rng.random_range(0.05..2.0));
    (model, grid, KernelMatrix::from_values(f).unwrap())
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let step = 1e-5;
    for seed in 0..20 {
        let (model, grid, batch) = random_case(seed);
        let (_, grad) = model.loss_and_gradient(&batch, &grid).unwrap();
        let analytic = grad.to_flat();
        let base = model.params().to_flat();
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[k] = base[k] + step;
            probe.params_mut().set_flat(&p);
            let up = probe.loss_and_gradient(&batch, &grid).unwrap().0;
            p[k] = base[k] - step;
            probe.params_mut().set_flat(&p);
            let down = probe.loss_and_gradient(&batch, &grid).unwrap().0;
            let numeric = (up - down) / (2.0 * step);
            let err = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-8);
            // Absolute floor for coordinates whose gradient is essentially zero.
            if (numeric - analytic[k]).abs() > 1e-8 {
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
    }
}
