//! Comparator estimators: the grid NPMLE and Efron's g.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::density::{Grid, KernelMatrix, MixingPmf};
use crate::error::{Error, Result};

/// Result of [`npmle_em`].
#[derive(Debug, Clone)]
pub struct NpmleFit {
    pub pmf: MixingPmf,
    /// Mean NLL before the first update and after each one.
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl NpmleFit {
    pub fn final_nll(&self) -> f64 {
        *self.nll_trace.last().expect("trace holds the starting value")
    }
}

pub const NPMLE_MAX_ITERS: usize = 5_000;
pub const NPMLE_TOL: f64 = 1e-10;

/// EM for the grid NPMLE, starting from the uniform PMF, with the multiplicative map
/// `w_j ← w_j · (1/n) Σ_i F_ij / Σ_k F_ik w_k`.
///
/// Each iteration is one SQUAREM cycle: two EM maps, a squared extrapolation
/// along them, and one EM map from the extrapolated point. The extrapolation is kept
/// only if it does not raise the NLL above the cycle's start; otherwise the cycle
/// falls back to the plain two-step EM iterate. Either way the NLL is non-increasing.
/// Stops once an iteration improves the mean NLL by less than `tol`.
pub fn npmle_em(kernel: &KernelMatrix, grid: &Grid, max_iters: usize, tol: f64) -> Result<NpmleFit> {
    if kernel.ncols() != grid.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel columns vs grid",
            expected: grid.len(),
            found: kernel.ncols(),
        });
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput("tolerance must be nonnegative".into()));
    }
    let f = kernel.values().as_standard_layout();
    let m = f.ncols();
    let rows = f.as_slice().expect("standard layout");
    let mut w = vec![1.0 / m as f64; m];
    let (mut w1, mut w2, mut w3) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let nll = em_map(rows, m, &w, &mut w1)?;
        if let Some(&prev) = trace.last() {
            if prev - nll < tol {
                trace.push(nll);
                converged = true;
                break;
            }
        }
        trace.push(nll);
        if iterations == max_iters {
            break;
        }
        iterations += 1;
        em_map(rows, m, &w1, &mut w2)?;
        let r: Vec<f64> = w1.iter().zip(&w).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = w2.iter().zip(&w1).zip(&r).map(|((c, b), ri)| c - b - ri).collect();
        let (rn, vn) = (norm(&r), norm(&v));
        let mut accepted = false;
        if vn > 0.0 && rn > 0.0 {
            let mut alpha = (-rn / vn).min(-1.0);
            // Shrink the step towards the plain EM iterate until it stays in the simplex.
            let mut proposal = vec![0.0; m];
            while alpha < -1.0 - 1e-8 {
                for j in 0..m {
                    proposal[j] = w[j] - 2.0 * alpha * r[j] + alpha * alpha * v[j];
                }
                if proposal.iter().all(|p| *p > 0.0 && p.is_finite()) {
                    break;
                }
                alpha = (alpha - 1.0) / 2.0;
            }
            if alpha < -1.0 - 1e-8 {
                let total: f64 = proposal.iter().sum();
                proposal.iter_mut().for_each(|p| *p /= total);
                if let Ok(extrap) = em_map(rows, m, &proposal, &mut w3) {
                    if extrap <= nll {
                        std::mem::swap(&mut w, &mut w3);
                        accepted = true;
                    }
                }
            }
        }
        if !accepted {
            std::mem::swap(&mut w, &mut w2);
        }
    }
    Ok(NpmleFit {
        pmf: MixingPmf::new(grid.clone(), w)?,
        nll_trace: trace,
        iterations,
        converged,
    })
}

/// One EM map from `w` into `out`; returns the mean NLL at `w`.
fn em_map(rows: &[f64], m: usize, w: &[f64], out: &mut [f64]) -> Result<f64> {
    out.iter_mut().for_each(|r| *r = 0.0);
    let mut loglik = 0.0;
    let mut n = 0usize;
    for (i, row) in rows.chunks_exact(m).enumerate() {
        let mix = dot(row, w);
        if !(mix > 0.0 && mix.is_finite()) {
            return Err(Error::NonFinite(format!("mixture likelihood of row {i} is {mix}")));
        }
        loglik += mix.ln();
        let inv = 1.0 / mix;
        for (r, a) in out.iter_mut().zip(row) {
            *r += a * inv;
        }
        n += 1;
    }
    for (o, wj) in out.iter_mut().zip(w) {
        *o *= wj / n as f64;
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(-loglik / n as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Natural cubic spline basis evaluated on a univariate grid.
///
/// Columns span the natural cubic splines with `p + 1` knots (boundary knots at the
/// grid ends, interior knots at equally spaced quantiles of the grid values) modulo
/// constants. They are centered and then orthonormalized, so the basis is determined
/// up to an orthogonal change of coordinates. The penalty `‖α‖₂` is invariant under
/// such changes, so fits do not depend on the choice.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    q: Array2<f64>,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// `m × p` basis matrix.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn df(&self) -> usize {
        self.q.ncols()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Uses an explicit matrix, e.g. for tests.
    pub fn from_matrix(q: Array2<f64>) -> Result<Self> {
        if q.ncols() == 0 || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("basis needs at least one finite column".into()));
        }
        Ok(SplineBasis { q, knots: Vec::new() })
    }
}

/// Builds the `p`-column natural spline basis for `grid` (`1 ≤ p < m`).
pub fn spline_basis(grid: &Grid, p: usize) -> Result<SplineBasis> {
    if grid.dim() != 1 {
        return Err(Error::InvalidInput("spline basis needs a univariate grid".into()));
    }
    let theta = grid.values();
    let m = theta.len();
    if p == 0 || p >= m {
        return Err(Error::InvalidInput(format!(
            "spline degrees of freedom must satisfy 1 <= p < m (p = {p}, m = {m})"
        )));
    }
    let lo = theta[0];
    let span = theta[m - 1] - lo;
    let x: Vec<f64> = theta.iter().map(|t| (t - lo) / span).collect();
    let knots: Vec<f64> = (0..=p).map(|k| quantile_sorted(&x, k as f64 / p as f64)).collect();

    // Truncated-power form of the natural spline basis without the constant term:
    // x, then d_k − d_{K−1} for k = 1..K−2, with K = p + 1 knots.
    let kk = knots.len();
    let last = knots[kk - 1];
    let d = |k: usize, v: f64| (cube_plus(v - knots[k]) - cube_plus(v - last)) / (last - knots[k]);
    let mut raw = Array2::<f64>::zeros((m, p));
    for (i, &v) in x.iter().enumerate() {
        raw[[i, 0]] = v;
        for k in 0..kk.saturating_sub(2) {
            raw[[i, k + 1]] = d(k, v) - d(kk - 2, v);
        }
    }
    for mut col in raw.columns_mut() {
        let mean = col.sum() / m as f64;
        col.mapv_inplace(|v| v - mean);
    }
    let q = orthonormalize(raw)?;
    Ok(SplineBasis {
        q,
        knots: knots.iter().map(|k| lo + k * span).collect(),
    })
}

fn cube_plus(v: f64) -> f64 {
    if v > 0.0 {
        v * v * v
    } else {
        0.0
    }
}

/// Type-7 quantile of sorted values.
fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let h = (x.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Modified Gram–Schmidt with one reorthogonalization pass.
fn orthonormalize(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let p = a.ncols();
    for j in 0..p {
        for _ in 0..2 {
            for k in 0..j {
                let dot = a.column(j).dot(&a.column(k));
                let qk = a.column(k).to_owned();
                a.column_mut(j).scaled_add(-dot, &qk);
            }
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if !(norm > 1e-10) {
            return Err(Error::Degenerate("spline basis columns are linearly dependent".into()));
        }
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(a)
}

/// `π_j ∝ exp(Q_j · α)`, normalized with log-sum-exp.
pub fn efron_pmf(basis: &SplineBasis, grid: &Grid, alpha: &[f64]) -> Result<MixingPmf> {
    Ok(MixingPmf::new(grid.clone(), efron_weights(basis, alpha)?)?)
}

fn efron_weights(basis: &SplineBasis, alpha: &[f64]) -> Result<Vec<f64>> {
    let q = basis.matrix();
    if alpha.len() != q.ncols() {
        return Err(Error::DimensionMismatch {
            context: "Efron coefficient vector",
            expected: q.ncols(),
            found: alpha.len(),
        });
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("Efron coefficients".into()));
    }
    let eta = q.dot(&Array1::from(alpha.to_vec()));
    let max = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Fitted Efron coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfronParams {
    pub alpha: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfronSettings {
    pub max_iters: usize,
    /// Sup-norm of the proximal gradient step below which the fit counts as converged.
    pub grad_tol: f64,
}

impl Default for EfronSettings {
    fn default() -> Self {
        EfronSettings {
            max_iters: 5000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EfronFit {
    pub pmf: MixingPmf,
    pub params: EfronParams,
    /// Penalized log-likelihood `Σ_i log Σ_j F_ij π_j(α) − λ‖α‖₂` at the returned `α`.
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out; `params` is then the best iterate.
    pub converged: bool,
}

/// Maximizes `Σ_i log Σ_j F_ij π_j(α) − λ‖α‖₂` from `α = 0`.
///
/// Proximal gradient ascent: the smooth log-likelihood takes a gradient step (first
/// trial length from the Barzilai–Borwein rule, then backtracking), and the norm
/// penalty is applied through its proximal map, which is exact at `α = 0`.
pub fn efron_fit(kernel: &KernelMatrix, grid: &Grid, basis: &SplineBasis, lambda: f64, settings: EfronSettings) -> Result<EfronFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput("lambda must be finite and nonnegative".into()));
    }
    if kernel.ncols() != grid.len() || basis.matrix().nrows() != grid.len() {
        return Err(Error::DimensionMismatch {
            context: "Efron fit: kernel columns / basis rows vs grid",
            expected: grid.len(),
            found: if kernel.ncols() != grid.len() {
                kernel.ncols()
            } else {
                basis.matrix().nrows()
            },
        });
    }
    let p = basis.df();
    // Minimize h(α) = −loglik(α) + λ‖α‖.
    let smooth = |alpha: &[f64]| -> Result<(f64, Vec<f64>)> { neg_loglik_and_grad(kernel, basis, alpha) };
    let penalty = |alpha: &[f64]| lambda * norm(alpha);

    let mut alpha = vec![0.0; p];
    let (mut f, mut g) = smooth(&alpha)?;
    let mut step = 1.0 / (kernel.nrows() as f64).max(1.0);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;
        if let Some((pa, pg)) = &prev {
            let s: Vec<f64> = alpha.iter().zip(pa).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                step = (dot(&s, &s) / sy).clamp(1e-12, 1e6);
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = alpha.iter().zip(&g).map(|(a, gi)| a - step * gi).collect();
            let cand = prox_norm(&trial, step * lambda);
            let diff: Vec<f64> = cand.iter().zip(&alpha).map(|(a, b)| a - b).collect();
            let (fc, gc) = smooth(&cand)?;
            if fc <= f + dot(&g, &diff) + dot(&diff, &diff) / (2.0 * step) + 1e-12 * f.abs() {
                accepted = Some((cand, diff, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, diff, fc, gc)) = accepted else {
            converged = true;
            break;
        };
        let moved = diff.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())) / step;
        prev = Some((std::mem::replace(&mut alpha, cand), std::mem::replace(&mut g, gc)));
        f = fc;
        if moved < settings.grad_tol {
            converged = true;
            break;
        }
    }
    let objective = -(f + penalty(&alpha));
    Ok(EfronFit {
        pmf: efron_pmf(basis, grid, &alpha)?,
        params: EfronParams { alpha, lambda },
        objective,
        iterations,
        converged,
    })
}

/// Penalized log-likelihood at `alpha`, as maximized by [`efron_fit`].
pub fn efron_objective(kernel: &KernelMatrix, basis: &SplineBasis, alpha: &[f64], lambda: f64) -> Result<f64> {
    let (f, _) = neg_loglik_and_grad(kernel, basis, alpha)?;
    Ok(-f - lambda * norm(alpha))
}

/// `−Σ_i log L_i` and its gradient `−Qᵀ(c − nπ)`, where `c_j = Σ_i F_ij π_j / L_i`.
fn neg_loglik_and_grad(kernel: &KernelMatrix, basis: &SplineBasis, alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
    let w = efron_weights(basis, alpha)?;
    let f = kernel.values();
    let n = f.nrows() as f64;
    let mut ll = 0.0;
    let mut c = vec![0.0; w.len()];
    for (i, row) in f.outer_iter().enumerate() {
        let mix: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        if !(mix > 0.0) {
            return Err(Error::NonFinite(format!("Efron mixture likelihood of observation {i}")));
        }
        ll += mix.ln();
        let inv = 1.0 / mix;
        for (cj, a) in c.iter_mut().zip(row.iter()) {
            *cj += a * inv;
        }
    }
    let resid: Vec<f64> = c.iter().zip(&w).map(|(cj, wj)| cj * wj - n * wj).collect();
    let grad = basis.matrix().t().dot(&Array1::from(resid));
    Ok((-ll, grad.iter().map(|v| -v).collect()))
}

fn prox_norm(v: &[f64], t: f64) -> Vec<f64> {
    let nv = norm(v);
    if nv <= t {
        return vec![0.0; v.len()];
    }
    let shrink = 1.0 - t / nv;
    v.iter().map(|x| x * shrink).collect()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
