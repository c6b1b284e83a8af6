//! Posteriors over the grid, Bayes estimates and credible intervals.

use ndarray::Array2;

use crate::density::{Grid, KernelMatrix, MixingPmf};
use crate::error::{Error, Result};

/// Row `i` is the posterior PMF of `θ_i` given `y_i`.
#[derive(Debug, Clone)]
pub struct PosteriorPmf {
    grid: Grid,
    weights: Array2<f64>,
}

impl PosteriorPmf {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `n × m` posterior weights.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }
}

/// `π(θ_j | y_i) ∝ F_ij w_j`.
pub fn posterior_pmf(kernel: &KernelMatrix, prior: &MixingPmf) -> Result<PosteriorPmf> {
    let w = prior.weights();
    if kernel.ncols() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel columns vs prior",
            expected: w.len(),
            found: kernel.ncols(),
        });
    }
    let mut post = kernel.values().clone();
    for (i, mut row) in post.outer_iter_mut().enumerate() {
        row.iter_mut().zip(w).for_each(|(f, p)| *f *= p);
        let total: f64 = row.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!(
                "observation {i} has zero marginal likelihood under the prior"
            )));
        }
        row.mapv_inplace(|v| v / total);
    }
    Ok(PosteriorPmf {
        grid: prior.grid().clone(),
        weights: post,
    })
}

/// Posterior means `Σ_j θ_j π(θ_j | y_i)` on a univariate grid. Use
/// [`posterior_coordinate_means`] for multivariate grids.
pub fn posterior_mean(post: &PosteriorPmf) -> Result<Vec<f64>> {
    if post.grid.dim() != 1 {
        return Err(Error::InvalidInput(
            "posterior_mean needs a univariate grid; use posterior_coordinate_means".into(),
        ));
    }
    let theta = post.grid.values();
    Ok(post
        .weights
        .outer_iter()
        .map(|row| row.iter().zip(theta).map(|(p, t)| p * t).sum())
        .collect())
}

/// `n × d` posterior means, one column per coordinate of the grid.
pub fn posterior_coordinate_means(post: &PosteriorPmf) -> Array2<f64> {
    let d = post.grid.dim();
    let mut out = Array2::zeros((post.len(), d));
    for (i, row) in post.weights.outer_iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            for (k, t) in post.grid.point(j).iter().enumerate() {
                out[[i, k]] += p * t;
            }
        }
    }
    out
}

/// Slack when comparing cumulative sums against a quantile level.
const CDF_SLACK: f64 = 1e-12;

/// Equal-tailed intervals from grid quantiles: `lo` is the smallest `θ_j` with
/// posterior CDF at least `(1 − level)/2`, `hi` the smallest with CDF at least
/// `(1 + level)/2`. At `level = 1` the interval runs between the outermost grid
/// points of positive mass.
pub fn credible_interval(post: &PosteriorPmf, level: f64) -> Result<Vec<(f64, f64)>> {
    if post.grid.dim() != 1 {
        return Err(Error::InvalidInput("credible intervals need a univariate grid".into()));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidInput("level must lie in (0, 1]".into()));
    }
    let theta = post.grid.values();
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = (1.0 + level) / 2.0;
    Ok(post
        .weights
        .outer_iter()
        .map(|row| {
            let mut cdf = 0.0;
            let mut lo = None;
            let mut hi = None;
            for (j, p) in row.iter().enumerate() {
                cdf += p;
                if lo.is_none() && cdf > 0.0 && cdf >= lo_q - CDF_SLACK {
                    lo = Some(theta[j]);
                }
                if hi.is_none() && cdf >= hi_q - CDF_SLACK {
                    hi = Some(theta[j]);
                    break;
                }
            }
            let last = theta[theta.len() - 1];
            let hi = hi.unwrap_or(last);
            (lo.unwrap_or(hi), hi)
        })
        .collect())
}

/// Fraction of `i` with `lo_i ≤ θ_i ≤ hi_i`.
pub fn empirical_coverage(true_thetas: &[f64], intervals: &[(f64, f64)]) -> Result<f64> {
    if true_thetas.len() != intervals.len() {
        return Err(Error::DimensionMismatch {
            context: "true thetas vs intervals",
            expected: intervals.len(),
            found: true_thetas.len(),
        });
    }
    if intervals.is_empty() {
        return Err(Error::InvalidInput("no intervals".into()));
    }
    let hits = true_thetas
        .iter()
        .zip(intervals)
        .filter(|(t, (lo, hi))| lo <= t && *t <= hi)
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

/// Average interval width.
pub fn mean_width(intervals: &[(f64, f64)]) -> f64 {
    if intervals.is_empty() {
        return 0.0;
    }
    intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / intervals.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{build_kernel_matrix, KernelSpec, Observations};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal(y: &[f64], grid: &Grid) -> KernelMatrix {
        build_kernel_matrix(&KernelSpec::NormalLocation { sigma: 1.0 }, &Observations::univariate(y), grid).unwrap()
    }

    #[test]
    fn point_mass_prior() {
        let grid = Grid::equispaced(-2.0, 2.0, 5).unwrap();
        let prior = MixingPmf::point_mass(grid.clone(), 3).unwrap();
        let k = normal(&[-1.0, 0.3, 2.5], &grid);
        let post = posterior_pmf(&k, &prior).unwrap();
        for row in post.weights().outer_iter() {
            assert_eq!(row[3], 1.0);
        }
        assert_eq!(posterior_mean(&post).unwrap(), vec![1.0; 3]);
        for iv in credible_interval(&post, 0.95).unwrap() {
            assert_eq!(iv, (1.0, 1.0));
        }
    }

    #[test]
    fn symmetric_case() {
        let grid = Grid::univariate(vec![-1.0, 1.0]).unwrap();
        let prior = MixingPmf::uniform(grid.clone());
        let post = posterior_pmf(&normal(&[0.0], &grid), &prior).unwrap();
        assert!((post.weights()[[0, 0]] - 0.5).abs() < 1e-15);
        assert!(posterior_mean(&post).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn matches_bayes_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = Grid::equispaced(-3.0, 3.0, 12).unwrap();
        let raw: Vec<f64> = (0..12).map(|_| rng.random_range(0.01..1.0)).collect();
        let prior = MixingPmf::from_unnormalized(grid.clone(), raw).unwrap();
        let y: Vec<f64> = (0..25).map(|_| rng.random_range(-4.0..4.0)).collect();
        let k = normal(&y, &grid);
        let post = posterior_pmf(&k, &prior).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            let un: Vec<f64> = grid
                .values()
                .iter()
                .zip(prior.weights())
                .map(|(t, w)| (-(yi - t).powi(2) / 2.0).exp() * w)
                .collect();
            let s: f64 = un.iter().sum();
            for j in 0..12 {
                assert!((post.weights()[[i, j]] - un[j] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_normal_posterior_mean() {
        let grid = Grid::equispaced(-8.0, 8.0, 2001).unwrap();
        let dens: Vec<f64> = grid.values().iter().map(|t| (-t * t / 2.0).exp()).collect();
        let prior = MixingPmf::from_unnormalized(grid.clone(), dens).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let post = posterior_pmf(&normal(&y, &grid), &prior).unwrap();
        for (m, yi) in posterior_mean(&post).unwrap().iter().zip(&y) {
            assert!((m - yi / 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn uniform_posterior_quantiles() {
        let grid = Grid::equispaced(0.0, 1.0, 100).unwrap();
        let post = PosteriorPmf {
            grid: grid.clone(),
            weights: Array2::from_elem((1, 100), 0.01),
        };
        let iv = credible_interval(&post, 0.95).unwrap()[0];
        assert_eq!(iv, (grid.values()[2], grid.values()[97]));
        let full = credible_interval(&post, 1.0).unwrap()[0];
        assert_eq!(full, (0.0, 1.0));
    }

    #[test]
    fn full_level_spans_positive_mass() {
        let grid = Grid::equispaced(0.0, 9.0, 10).unwrap();
        let mut w = Array2::zeros((1, 10));
        w[[0, 2]] = 0.3;
        w[[0, 6]] = 0.7;
        let post = PosteriorPmf { grid, weights: w };
        assert_eq!(credible_interval(&post, 1.0).unwrap()[0], (2.0, 6.0));
    }

    #[test]
    fn coverage_counts() {
        let iv = vec![(0.0, 1.0); 10];
        assert_eq!(empirical_coverage(&[0.5; 10], &iv).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&[2.0; 10], &iv).unwrap(), 0.0);
        let t: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.5 } else { -1.0 }).collect();
        assert_eq!(empirical_coverage(&t, &iv).unwrap(), 0.5);
    }

    #[test]
    fn multivariate_means_need_the_coordinate_variant() {
        let grid = Grid::from_points(2, &[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let post = PosteriorPmf {
            grid,
            weights: Array2::from_shape_vec((1, 2), vec![0.25, 0.75]).unwrap(),
        };
        assert!(posterior_mean(&post).is_err());
        let m = posterior_coordinate_means(&post);
        assert!((m[[0, 0]] - 1.5).abs() < 1e-15 && (m[[0, 1]] - 2.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn posterior_rows_valid_and_intervals_nested(
            raw in proptest::collection::vec(0.0f64..1.0, 15),
            ys in proptest::collection::vec(-5.0f64..5.0, 1..20),
        ) {
            prop_assume!(raw.iter().any(|v| *v > 1e-3));
            let grid = Grid::equispaced(-4.0, 4.0, 15).unwrap();
            let prior = MixingPmf::from_unnormalized(grid.clone(), raw).unwrap();
            let post = posterior_pmf(&normal(&ys, &grid), &prior).unwrap();
            for row in post.weights().outer_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-10);
                prop_assert!(row.iter().all(|p| *p >= 0.0));
            }
            for m in posterior_mean(&post).unwrap() {
                prop_assert!((-4.0 - 1e-12..=4.0 + 1e-12).contains(&m));
            }
            let narrow = credible_interval(&post, 0.95).unwrap();
            let wide = credible_interval(&post, 0.99).unwrap();
            for ((a, b), (c, d)) in narrow.iter().zip(&wide) {
                prop_assert!(c <= a && b <= d);
            }
        }
    }
}
