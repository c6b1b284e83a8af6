//! Bivariate `(μ, σ²)` mixing distributions from paired replicates: grid selection by
//! k-means over per-observation MLEs, and neural-g with two-dimensional inputs.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{build_kernel_matrix, Grid, KernelSpec, Observations};
use crate::error::{Error, Result};
use crate::mlp::MlpArchitecture;
use crate::optimizer::{fit_neural_g_with_inputs, NeuralGFit, TrainConfig};

/// Lower bound on variance coordinates.
pub const SIGMA2_FLOOR: f64 = 1e-6;

const KMEANS_MAX_ITERS: usize = 300;

/// Per-observation MLEs `(ȳ_i, (y_i1 − y_i2)²/2)` with the variance floored.
pub fn conditional_mles(data: &Observations) -> Result<Vec<[f64; 2]>> {
    if data.width() != 2 {
        return Err(Error::DimensionMismatch {
            context: "replicates per observation",
            expected: 2,
            found: data.width(),
        });
    }
    (0..data.len())
        .map(|i| {
            let r = data.row(i);
            let (a, b) = (r[0], r[1]);
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::NonFinite(format!("observation {i} is not finite")));
            }
            Ok([(a + b) / 2.0, ((a - b).powi(2) / 2.0).max(SIGMA2_FLOOR)])
        })
        .collect()
}

/// Selected grid, plus a note when fewer than the requested points were possible.
#[derive(Debug, Clone)]
pub struct GridSelection {
    pub grid: Grid,
    pub warning: Option<String>,
}

/// Up to `m` representative `(μ, σ²)` points. The MLEs are z-scored on
/// `(μ̂, log σ̂²)` and clustered by seeded k-means; the centers are mapped back to
/// `(μ, σ²)`. The input is sorted first, so row
/// order does not matter. With fewer than `m` distinct MLEs, one point per distinct
/// MLE is returned with a warning.
pub fn select_grid_bivariate(data: &Observations, m: usize, seed: u64) -> Result<GridSelection> {
    let n = data.len();
    if m == 0 {
        return Err(Error::InvalidInput("grid size must be at least 1".into()));
    }
    if m > n {
        return Err(Error::InvalidInput(format!("grid size {m} exceeds the number of observations {n}")));
    }
    let mut mles = conditional_mles(data)?;
    mles.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));

    let mut distinct = mles.clone();
    distinct.dedup();
    let mut warning = None;
    let k = if distinct.len() < m {
        warning = Some(format!(
            "only {} distinct observations; returning {} grid points instead of {m}",
            distinct.len(),
            distinct.len()
        ));
        distinct.len()
    } else {
        m
    };

    let mut centers: Vec<[f64; 2]> = if k == distinct.len() {
        distinct
    } else {
        let feats = standardized_features(&mles);
        let labels = kmeans(&feats, k, seed);
        let mut sums = vec![[0.0f64; 3]; k];
        for (p, &l) in mles.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1].ln();
            sums[l][2] += 1.0;
        }
        sums.into_iter()
            .filter(|s| s[2] > 0.0)
            .map(|s| [s[0] / s[2], (s[1] / s[2]).exp().max(SIGMA2_FLOOR)])
            .collect()
    };
    centers.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    centers.dedup();
    let points: Vec<Vec<f64>> = centers.iter().map(|c| c.to_vec()).collect();
    Ok(GridSelection {
        grid: Grid::from_points(2, &points)?,
        warning,
    })
}

fn standardized_features(mles: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let raw: Vec<[f64; 2]> = mles.iter().map(|p| [p[0], p[1].ln()]).collect();
    let z = ZScore::fit(&raw);
    raw.iter().map(|p| z.apply(*p)).collect()
}

/// Lloyd's algorithm from a k-means++ start; returns cluster labels. Empty clusters
/// are reseeded at the point farthest from its center.
fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);

    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut nearest: Vec<f64> = points.iter().map(|p| d2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(d2(p, &points[next]));
        }
    }

    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, ctr) in centers.iter().enumerate() {
                let d = d2(p, ctr);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 3]; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            sums[l][2] += 1.0;
        }
        for c in 0..k {
            if sums[c][2] > 0.0 {
                centers[c] = [sums[c][0] / sums[c][2], sums[c][1] / sums[c][2]];
            } else {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        d2(&points[a], &centers[labels[a]]).total_cmp(&d2(&points[b], &centers[labels[b]]))
                    })
                    .expect("nonempty");
                centers[c] = points[far];
                labels[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ZScore {
    mean: [f64; 2],
    sd: [f64; 2],
}

impl ZScore {
    fn fit(points: &[[f64; 2]]) -> Self {
        let n = points.len() as f64;
        let mut mean = [0.0; 2];
        let mut sd = [0.0; 2];
        for k in 0..2 {
            mean[k] = points.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n;
            // A constant coordinate is left unscaled.
            sd[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        ZScore { mean, sd }
    }

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.mean[0]) / self.sd[0], (p[1] - self.mean[1]) / self.sd[1]]
    }
}

/// Maps `(μ, σ²)` to z-scored `(μ, log σ²)`, the network's input space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateStandardizer {
    z: ZScore,
}

impl BivariateStandardizer {
    /// Moments of `(μ̂, log σ̂²)` over the observations, the scale k-means works on.
    pub fn fit(data: &Observations) -> Result<Self> {
        let mles = conditional_mles(data)?;
        if mles.is_empty() {
            return Err(Error::InvalidInput("no observations".into()));
        }
        let pts: Vec<[f64; 2]> = mles.iter().map(|p| [p[0], p[1].ln()]).collect();
        Ok(BivariateStandardizer { z: ZScore::fit(&pts) })
    }

    pub fn transform(&self, point: [f64; 2]) -> [f64; 2] {
        self.z.apply([point[0], point[1].max(SIGMA2_FLOOR).ln()])
    }

    /// One row per grid point.
    pub fn inputs(&self, grid: &Grid) -> Result<Array2<f64>> {
        if grid.dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "grid dimension",
                expected: 2,
                found: grid.dim(),
            });
        }
        let mut out = Array2::zeros((grid.len(), 2));
        for (j, p) in grid.iter().enumerate() {
            let t = self.transform([p[0], p[1]]);
            out[[j, 0]] = t[0];
            out[[j, 1]] = t[1];
        }
        Ok(out)
    }
}

/// Neural-g on a bivariate grid under the two-replicate normal location-scale
/// kernel, with standardized grid coordinates as network inputs.
pub fn fit_multivariate_neural_g(
    data: &Observations,
    grid: &Grid,
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
) -> Result<NeuralGFit> {
    if arch.input_dim != 2 {
        return Err(Error::InvalidInput(format!(
            "bivariate fits need input_dim = 2, got {}",
            arch.input_dim
        )));
    }
    let spec = KernelSpec::NormalLocationScale { replicates: 2 };
    let kernel = build_kernel_matrix(&spec, data, grid)?;
    let inputs = BivariateStandardizer::fit(data)?.inputs(grid)?;
    fit_neural_g_with_inputs(&kernel, grid, &inputs, arch, cfg)
}
