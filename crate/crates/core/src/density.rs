//! Support grids, probability mass functions on them, likelihood kernels and the
//! mixture negative log-likelihood shared by every estimator.

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Tolerance on the unit-sum constraint of a [`MixingPmf`].
pub const PMF_SUM_TOL: f64 = 1e-10;

/// Ordered finite support `{θ_1, …, θ_m}`. Each point is a `dim`-tuple, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    points: Vec<f64>,
}

impl Grid {
    /// A univariate grid. Points must be finite and strictly increasing.
    pub fn univariate(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("grid must be nonempty".into()));
        }
        if let Some(bad) = points.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("grid point {bad} is not finite")));
        }
        if let Some(k) = points.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "univariate grid must be strictly increasing (points {k} and {})",
                k + 1
            )));
        }
        Ok(Grid { dim: 1, points })
    }

    /// A grid of `dim`-tuples. Duplicates (bit-equal tuples) are rejected.
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("grid dimension must be at least 1".into()));
        }
        if dim == 1 {
            return Grid::univariate(points.iter().map(|p| p.first().copied().unwrap_or(f64::NAN)).collect());
        }
        if points.is_empty() {
            return Err(Error::InvalidInput("grid must be nonempty".into()));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "grid point",
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("grid coordinates must be finite".into()));
            }
            flat.extend_from_slice(p);
        }
        let mut keys: Vec<Vec<u64>> = points
            .iter()
            .map(|p| p.iter().map(|v| v.to_bits()).collect())
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("grid contains duplicate points".into()));
        }
        Ok(Grid { dim, points: flat })
    }

    /// `m` equispaced points from `lo` to `hi` inclusive.
    pub fn equispaced(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidInput(format!("equispaced grid needs m >= 2, got {m}")));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Degenerate(format!(
                "equispaced grid needs a nondegenerate range, got [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| lo + step * j as f64).collect();
        points[m - 1] = hi;
        Grid::univariate(points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of support points `m`.
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinates of the `j`th support point.
    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    /// All coordinates as an `m × dim` matrix.
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.len(), self.dim), self.points.clone())
            .expect("grid storage is m*dim")
    }

    /// The support values of a univariate grid; panics for `dim > 1`.
    pub fn values(&self) -> &[f64] {
        assert_eq!(self.dim, 1, "values() is only defined for univariate grids");
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    /// Same points in reverse order. Only meaningful as a raw point list; the result
    /// is not a valid univariate grid, so it is returned as a vector.
    pub fn reversed_values(&self) -> Vec<f64> {
        self.points.iter().rev().copied().collect()
    }
}

/// A probability mass function over a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixingPmf {
    grid: Grid,
    weights: Vec<f64>,
}

impl MixingPmf {
    /// Validates nonnegativity and unit sum (to [`PMF_SUM_TOL`]).
    pub fn new(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "pmf weights",
                expected: grid.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("pmf weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidInput(format!("pmf weights sum to {total}, not 1")));
        }
        Ok(MixingPmf { grid, weights })
    }

    /// Normalizes nonnegative masses to unit sum.
    pub fn from_unnormalized(grid: Grid, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total.is_finite() && total > 0.0) || masses.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidInput(
                "masses must be nonnegative with a positive finite total".into(),
            ));
        }
        let weights = masses.into_iter().map(|w| w / total).collect();
        MixingPmf::new(grid, weights)
    }

    pub fn uniform(grid: Grid) -> Self {
        let m = grid.len();
        MixingPmf {
            weights: vec![1.0 / m as f64; m],
            grid,
        }
    }

    /// All mass on support point `j`.
    pub fn point_mass(grid: Grid, j: usize) -> Result<Self> {
        if j >= grid.len() {
            return Err(Error::InvalidInput(format!("point index {j} outside grid")));
        }
        let mut weights = vec![0.0; grid.len()];
        weights[j] = 1.0;
        Ok(MixingPmf { grid, weights })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Right-continuous step CDF of a univariate PMF evaluated at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let values = self.grid.values();
        let mut acc = 0.0;
        for (theta, w) in values.iter().zip(&self.weights) {
            if *theta > x {
                break;
            }
            acc += w;
        }
        acc.min(1.0)
    }

    /// Mean of each coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.dim()];
        for (p, w) in self.grid.iter().zip(&self.weights) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += w * v;
            }
        }
        out
    }

    /// Marginal PMF along coordinate `axis`, as (value, mass) pairs sorted by value.
    pub fn marginal(&self, axis: usize) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = self
            .grid
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| (p[axis], *w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (v, w) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => out.push((v, w)),
            }
        }
        out
    }
}

/// Observations, one row per unit. Univariate data have a single column; the
/// location-scale model uses one column per replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    values: Array2<f64>,
}

impl Observations {
    pub fn univariate(y: &[f64]) -> Self {
        Observations {
            values: Array2::from_shape_vec((y.len(), 1), y.to_vec()).expect("n x 1"),
        }
    }

    pub fn paired(pairs: &[(f64, f64)]) -> Self {
        let flat: Vec<f64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        Observations {
            values: Array2::from_shape_vec((pairs.len(), 2), flat).expect("n x 2"),
        }
    }

    pub fn from_matrix(values: Array2<f64>) -> Self {
        Observations { values }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Number of columns (responses per unit).
    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.values
    }

    /// First column, which is the whole data set for univariate observations.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.column(k).to_vec()
    }

    pub fn select(&self, rows: &[usize]) -> Observations {
        Observations {
            values: self.values.select(Axis(0), rows),
        }
    }
}

/// Likelihood family `f(y | θ)` with its nuisance parameters fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `y | θ ~ N(θ, σ²)`, `σ` a standard deviation.
    NormalLocation { sigma: f64 },
    /// `y | θ ~ Poisson(θ)`.
    Poisson,
    /// `log y | θ ~ N(θ, σ²)`.
    LogNormal { sigma: f64 },
    /// `y_1, …, y_r | (μ, σ²)` i.i.d. `N(μ, σ²)`; `θ = (μ, σ²)`.
    NormalLocationScale { replicates: usize },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::NormalLocation { sigma } | KernelSpec::LogNormal { sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "kernel scale must be positive, got {sigma}"
                    )));
                }
            }
            KernelSpec::NormalLocationScale { replicates } => {
                if replicates == 0 {
                    return Err(Error::InvalidInput("need at least one replicate".into()));
                }
            }
            KernelSpec::Poisson => {}
        }
        Ok(())
    }

    /// Dimension of `θ`.
    pub fn param_dim(&self) -> usize {
        match self {
            KernelSpec::NormalLocationScale { .. } => 2,
            _ => 1,
        }
    }

    /// Number of responses per observation.
    pub fn obs_dim(&self) -> usize {
        match *self {
            KernelSpec::NormalLocationScale { replicates } => replicates,
            _ => 1,
        }
    }

    /// Natural scale of the kernel in `θ` units, used to pad quadrature ranges.
    pub fn scale(&self) -> f64 {
        match *self {
            KernelSpec::NormalLocation { sigma } | KernelSpec::LogNormal { sigma } => sigma,
            _ => 1.0,
        }
    }

    /// `log f(y | θ)`; may be `-inf` where the density vanishes.
    pub fn log_density(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        if y.len() != self.obs_dim() {
            return Err(Error::DimensionMismatch {
                context: "observation",
                expected: self.obs_dim(),
                found: y.len(),
            });
        }
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "grid point",
                expected: self.param_dim(),
                found: theta.len(),
            });
        }
        match *self {
            KernelSpec::NormalLocation { sigma } => Ok(normal_log_pdf(y[0], theta[0], sigma)),
            KernelSpec::Poisson => {
                let (k, rate) = (y[0], theta[0]);
                if !(k >= 0.0 && k.fract() == 0.0 && k.is_finite()) {
                    return Err(Error::Domain(format!(
                        "Poisson observation must be a nonnegative integer, got {k}"
                    )));
                }
                if !(rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::Domain(format!("Poisson rate must be nonnegative, got {rate}")));
                }
                if rate == 0.0 {
                    // Degenerate limit: all mass at zero.
                    return Ok(if k == 0.0 { 0.0 } else { f64::NEG_INFINITY });
                }
                Ok(k * rate.ln() - rate - statrs::function::factorial::ln_factorial(k as u64))
            }
            KernelSpec::LogNormal { sigma } => {
                let v = y[0];
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Domain(format!("log-normal observation must be positive, got {v}")));
                }
                let ly = v.ln();
                Ok(normal_log_pdf(ly, theta[0], sigma) - ly)
            }
            KernelSpec::NormalLocationScale { .. } => {
                let (mu, var) = (theta[0], theta[1]);
                if !(var > 0.0 && var.is_finite()) {
                    return Err(Error::Domain(format!("variance coordinate must be positive, got {var}")));
                }
                let sd = var.sqrt();
                Ok(y.iter().map(|&v| normal_log_pdf(v, mu, sd)).sum())
            }
        }
    }
}

fn normal_log_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// `f(y | θ)`, evaluated through the log-density.
pub fn kernel_density(spec: &KernelSpec, y: &[f64], theta: &[f64]) -> Result<f64> {
    spec.validate()?;
    let v = spec.log_density(y, theta)?.exp();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("kernel density at y={y:?}, theta={theta:?}")));
    }
    Ok(v)
}

/// The `n × m` matrix `F[i][j] = f(y_i | θ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: Array2<f64>,
}

impl KernelMatrix {
    /// Wraps a precomputed matrix, checking finiteness, nonnegativity and that every
    /// row has a positive entry.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        for (i, row) in values.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFinite(format!("kernel matrix row {i}")));
            }
            if !row.iter().any(|v| *v > 0.0) {
                return Err(Error::ZeroLikelihoodRow { row: i });
            }
        }
        Ok(KernelMatrix { values })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn select_rows(&self, rows: &[usize]) -> KernelMatrix {
        KernelMatrix {
            values: self.values.select(Axis(0), rows),
        }
    }

    /// `Σ_j F[i][j] w_j` for every row, summed left to right.
    pub fn row_mixtures(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.ncols(), "weights must match grid size");
        self.values
            .outer_iter()
            .map(|row| {
                let mut s = 0.0;
                for (f, w) in row.iter().zip(weights) {
                    s += f * w;
                }
                s
            })
            .collect()
    }
}

/// Evaluates the kernel on every (observation, grid point) pair.
pub fn build_kernel_matrix(spec: &KernelSpec, data: &Observations, grid: &Grid) -> Result<KernelMatrix> {
    spec.validate()?;
    if grid.dim() != spec.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "grid dimension for kernel",
            expected: spec.param_dim(),
            found: grid.dim(),
        });
    }
    if data.width() != spec.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "observation width for kernel",
            expected: spec.obs_dim(),
            found: data.width(),
        });
    }
    let (n, m) = (data.len(), grid.len());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = data.row(i).to_vec();
            grid.iter()
                .map(|theta| spec.log_density(&y, theta).map(f64::exp))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    KernelMatrix::from_values(Array2::from_shape_vec((n, m), flat).expect("n*m entries"))
}

/// `-(1/n) Σ_i log Σ_j F[i][j] w_j`.
pub fn mixture_nll(kernel: &KernelMatrix, pmf: &MixingPmf) -> Result<f64> {
    if kernel.ncols() != pmf.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel columns vs pmf",
            expected: kernel.ncols(),
            found: pmf.len(),
        });
    }
    nll_from_weights(kernel, pmf.weights())
}

pub(crate) fn nll_from_weights(kernel: &KernelMatrix, weights: &[f64]) -> Result<f64> {
    let n = kernel.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty kernel matrix".into()));
    }
    let mut total = 0.0;
    for (i, mix) in kernel.row_mixtures(weights).into_iter().enumerate() {
        if !(mix > 0.0 && mix.is_finite()) {
            return Err(Error::NonFinite(format!("mixture likelihood of row {i} is {mix}")));
        }
        total += mix.ln();
    }
    Ok(-total / n as f64)
}

/// `exp(x_j) / Σ_k exp(x_k)`, computed after subtracting `max x`.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax of the logits `h_j = log(2m·p_j/ε + 1)`.
///
/// The result differs from `p` by at most `1/(1 + 2/ε)` in sup norm, which is the
/// approximation target a one-hidden-layer network has to reach.
pub fn softmax_shift_construct(p: &MixingPmf, eps: f64) -> Result<MixingPmf> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let m = p.len() as f64;
    let logits: Vec<f64> = p
        .weights()
        .iter()
        .map(|&w| (2.0 * m * w / eps + 1.0).ln())
        .collect();
    Ok(MixingPmf {
        grid: p.grid().clone(),
        weights: softmax(&logits),
    })
}

/// `1/(1 + 2/ε)`, the sup-norm bound met by [`softmax_shift_construct`].
pub fn softmax_shift_bound(eps: f64) -> f64 {
    1.0 / (1.0 + 2.0 / eps)
}
