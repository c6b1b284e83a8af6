//! Replicated measurements `y_i1, y_i2` of a latent `μ_i`. With a common error variance
//! the pair means follow a normal-location model; otherwise the bivariate
//! `(μ, σ²)` model applies.

use serde::{Deserialize, Serialize};

use crate::density::{Grid, KernelSpec, Observations};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, Fitted};
use crate::multivariate::select_grid_bivariate;
use crate::simulate::default_grid;

/// `σ̂² = ½ · var(y_i1 − y_i2)`, using the `n − 1` sample variance.
pub fn plug_in_sigma2(data: &Observations) -> Result<f64> {
    let d = differences(data)?;
    if d.len() < 2 {
        return Err(Error::InvalidInput("need at least two pairs".into()));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("within-pair differences have zero variance".into()));
    }
    Ok(0.5 * var)
}

fn differences(data: &Observations) -> Result<Vec<f64>> {
    if data.width() != 2 {
        return Err(Error::DimensionMismatch {
            context: "replicates per observation",
            expected: 2,
            found: data.width(),
        });
    }
    (0..data.len())
        .map(|i| {
            let d = data.row(i)[0] - data.row(i)[1];
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonFinite(format!("pair {i} is not finite")))
            }
        })
        .collect()
}

/// `ȳ_i = (y_i1 + y_i2)/2`.
pub fn pair_means(data: &Observations) -> Result<Vec<f64>> {
    differences(data)?;
    Ok((0..data.len()).map(|i| (data.row(i)[0] + data.row(i)[1]) / 2.0).collect())
}

#[derive(Debug, Clone)]
pub struct HomogeneousFit {
    pub fit: Fitted,
    pub sigma2: f64,
    /// `N(μ, σ̂²/2)` for the pair means.
    pub kernel: KernelSpec,
    pub means: Observations,
}

/// Default grid for the homogeneous model: `m` points across the pair means.
pub fn homogeneous_grid(data: &Observations, m: usize) -> Result<Grid> {
    default_grid(&pair_means(data)?, m)
}

/// Plug-in `σ̂²`, then `ȳ_i | μ_i ~ N(μ_i, σ̂²/2)` fitted with `estimator`.
pub fn fit_homogeneous(data: &Observations, grid: &Grid, estimator: &Estimator) -> Result<HomogeneousFit> {
    let sigma2 = plug_in_sigma2(data)?;
    fit_homogeneous_known(data, grid, estimator, sigma2)
}

/// As [`fit_homogeneous`] with the error variance supplied.
pub fn fit_homogeneous_known(data: &Observations, grid: &Grid, estimator: &Estimator, sigma2: f64) -> Result<HomogeneousFit> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidInput(format!("error variance must be positive, got {sigma2}")));
    }
    let means = Observations::univariate(&pair_means(data)?);
    let kernel = KernelSpec::NormalLocation {
        sigma: (sigma2 / 2.0).sqrt(),
    };
    let fit = estimator.fit_data(&kernel, &means, grid)?;
    Ok(HomogeneousFit {
        fit,
        sigma2,
        kernel,
        means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneousOptions {
    pub grid_size: usize,
    pub grid_seed: u64,
}

/// Bivariate `(μ_i, σ_i²)` fit: k-means grid selection, then the estimator on the
/// two-replicate location-scale kernel.
pub fn fit_heterogeneous(data: &Observations, estimator: &Estimator, opts: HeterogeneousOptions) -> Result<(Grid, Fitted)> {
    let grid = select_grid_bivariate(data, opts.grid_size, opts.grid_seed)?.grid;
    let fit = estimator.fit_data(&KernelSpec::NormalLocationScale { replicates: 2 }, data, &grid)?;
    Ok((grid, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{build_kernel_matrix, mixture_nll, MixingPmf};
    use crate::metrics::{w1_distance, TruePrior};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// `μ_i ~ N(0,1)` with two `N(μ_i, σ²)` replicates.
    fn synthetic(n: usize, sigma2: f64, seed: u64) -> Observations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let s = sigma2.sqrt();
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let mu = z.sample(&mut rng);
                (mu + s * z.sample(&mut rng), mu + s * z.sample(&mut rng))
            })
            .collect();
        Observations::paired(&pairs)
    }

    #[test]
    fn plug_in_examples() {
        assert_eq!(plug_in_sigma2(&Observations::paired(&[(1.0, 1.0), (3.0, 1.0)])).unwrap(), 1.0);
        assert!(plug_in_sigma2(&Observations::paired(&[(1.0, 1.0), (4.0, 4.0)])).is_err());
        assert!(plug_in_sigma2(&Observations::paired(&[(1.0, 2.0)])).is_err());
        let big = plug_in_sigma2(&synthetic(100_000, 1.0, 5)).unwrap();
        assert!((big - 1.0).abs() < 0.02, "{big}");
    }

    proptest! {
        #[test]
        fn plug_in_ignores_pair_orientation(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
        ) {
            let a = plug_in_sigma2(&Observations::paired(&pairs));
            let swapped: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (y, x)).collect();
            let b = plug_in_sigma2(&Observations::paired(&swapped));
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "only one orientation failed"),
            }
        }
    }

    #[test]
    fn npmle_route_improves_on_uniform() {
        let data = synthetic(2000, 1.0, 1);
        let grid = homogeneous_grid(&data, 100).unwrap();
        let fit = fit_homogeneous(&data, &grid, &Estimator::npmle()).unwrap();
        let k = build_kernel_matrix(&fit.kernel, &fit.means, &grid).unwrap();
        let pmf = fit.fit.pmf();
        assert!((pmf.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mixture_nll(&k, pmf).unwrap() <= mixture_nll(&k, &MixingPmf::uniform(grid)).unwrap());
    }

    #[test]
    fn neural_g_route() {
        let data = synthetic(2000, 1.0, 2);
        let grid = homogeneous_grid(&data, 100).unwrap();
        let est = Estimator::neural_g(2);
        let plug = fit_homogeneous(&data, &grid, &est).unwrap();
        let again = fit_homogeneous(&data, &grid, &est).unwrap();
        assert_eq!(plug.fit.pmf().weights(), again.fit.pmf().weights());

        let truth = TruePrior::Gaussian { mean: 0.0, sd: 1.0 };
        let w_plug = w1_distance(plug.fit.pmf(), &truth).unwrap().value;
        let known = fit_homogeneous_known(&data, &grid, &est, 1.0).unwrap();
        let w_known = w1_distance(known.fit.pmf(), &truth).unwrap().value;
        assert!((w_plug - w_known).abs() <= 0.05, "plug-in {w_plug} vs known {w_known}");
    }

    #[test]
    fn heterogeneous_route() {
        let data = synthetic(300, 0.5, 3);
        let mut est = Estimator::neural_g(1);
        if let Estimator::NeuralG(s) = &mut est {
            s.hidden_layers = 2;
            s.hidden_width = 32;
            s.max_epochs = 3;
        }
        let (grid, fit) = fit_heterogeneous(&data, &est, HeterogeneousOptions { grid_size: 25, grid_seed: 1 }).unwrap();
        assert_eq!(grid.dim(), 2);
        assert_eq!(fit.pmf().len(), grid.len());
    }
}
