//! True priors and the accuracy metrics: W1, Bayes-estimate MAE, the count-fit
//! statistic and cross-validated predictive log-likelihood.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::density::{build_kernel_matrix, Grid, KernelSpec, MixingPmf, Observations};
use crate::error::{Error, Result};

/// Tail mass left out when an unbounded prior is truncated for integration.
const TAIL: f64 = 5e-9;

/// A data-generating prior with exact CDF (univariate) or exact atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TruePrior {
    Uniform { lo: f64, hi: f64 },
    /// Mixture of uniforms: `(lo, hi, weight)` per piece, weights summing to one.
    PiecewiseConstant { pieces: Vec<(f64, f64, f64)> },
    /// Max-convention Gumbel: `F(x) = exp(-exp(-(x - loc)/scale))`.
    Gumbel { loc: f64, scale: f64 },
    Beta { a: f64, b: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// `(location, mass)` pairs.
    Atoms { atoms: Vec<(f64, f64)> },
    /// Bivariate `((μ, σ²), mass)` pairs.
    BiAtoms { atoms: Vec<([f64; 2], f64)> },
    /// `σ² ~ InvGamma(shape, scale)`, `μ | σ² ~ N(mu0, σ²/lambda)`.
    Nig { mu0: f64, lambda: f64, shape: f64, scale: f64 },
}

impl TruePrior {
    /// Point masses of a PMF, for comparing two estimates.
    pub fn from_pmf(pmf: &MixingPmf) -> Result<Self> {
        if pmf.grid().dim() != 1 {
            return Err(Error::InvalidInput("only univariate PMFs convert to atom lists".into()));
        }
        Ok(TruePrior::Atoms {
            atoms: pmf.grid().values().iter().copied().zip(pmf.weights().iter().copied()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            TruePrior::BiAtoms { .. } | TruePrior::Nig { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, TruePrior::Atoms { .. } | TruePrior::BiAtoms { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("true prior: {m}")));
        match self {
            TruePrior::Uniform { lo, hi } if !(lo < hi) => bad("uniform needs lo < hi"),
            TruePrior::PiecewiseConstant { pieces } => {
                if pieces.is_empty() || pieces.iter().any(|(l, h, w)| !(l < h) || *w < 0.0) {
                    return bad("pieces need lo < hi and nonnegative weights");
                }
                let total: f64 = pieces.iter().map(|p| p.2).sum();
                if (total - 1.0).abs() > 1e-10 {
                    return bad("piece weights must sum to one");
                }
                Ok(())
            }
            TruePrior::Gumbel { scale, .. } if !(*scale > 0.0) => bad("gumbel scale must be positive"),
            TruePrior::Beta { a, b } if !(*a > 0.0 && *b > 0.0) => bad("beta shapes must be positive"),
            TruePrior::Gaussian { sd, .. } if !(*sd > 0.0) => bad("gaussian sd must be positive"),
            TruePrior::Atoms { atoms } => check_masses(atoms.iter().map(|a| a.1)),
            TruePrior::BiAtoms { atoms } => check_masses(atoms.iter().map(|a| a.1)),
            TruePrior::Nig { lambda, shape, scale, .. } if !(*lambda > 0.0 && *shape > 0.0 && *scale > 0.0) => {
                bad("NIG parameters must be positive")
            }
            _ => Ok(()),
        }
    }

    /// CDF of a univariate prior.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            TruePrior::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            TruePrior::PiecewiseConstant { pieces } => pieces
                .iter()
                .map(|(l, h, w)| w * ((x - l) / (h - l)).clamp(0.0, 1.0))
                .sum::<f64>()
                .min(1.0),
            TruePrior::Gumbel { loc, scale } => (-(-(x - loc) / scale).exp()).exp(),
            TruePrior::Beta { a, b } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    Beta::new(*a, *b).expect("validated").cdf(x)
                }
            }
            TruePrior::Gaussian { mean, sd } => Normal::new(*mean, *sd).expect("validated").cdf(x),
            TruePrior::Atoms { atoms } => atoms.iter().filter(|(t, _)| *t <= x).map(|a| a.1).sum::<f64>().min(1.0),
            TruePrior::BiAtoms { .. } | TruePrior::Nig { .. } => {
                panic!("cdf is defined for univariate priors only")
            }
        }
    }

    /// An interval holding all but a negligible (< 1e-8) amount of mass.
    pub fn support(&self) -> (f64, f64) {
        match self {
            TruePrior::Uniform { lo, hi } => (*lo, *hi),
            TruePrior::PiecewiseConstant { pieces } => (
                pieces.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
                pieces.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
            ),
            TruePrior::Gumbel { loc, scale } => (loc - scale * (-TAIL.ln()).ln(), loc - scale * (-(1.0 - TAIL).ln()).ln()),
            TruePrior::Beta { .. } => (0.0, 1.0),
            TruePrior::Gaussian { mean, sd } => {
                let n = Normal::new(*mean, *sd).expect("validated");
                (n.inverse_cdf(TAIL), n.inverse_cdf(1.0 - TAIL))
            }
            TruePrior::Atoms { atoms } => (
                atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min),
                atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max),
            ),
            TruePrior::BiAtoms { .. } | TruePrior::Nig { .. } => {
                panic!("support is defined for univariate priors only")
            }
        }
    }

    /// One draw of `θ` (length [`TruePrior::dim`]).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            TruePrior::Uniform { lo, hi } => vec![rng.random_range(*lo..*hi)],
            TruePrior::PiecewiseConstant { pieces } => {
                let k = pick(rng, pieces.iter().map(|p| p.2));
                let (l, h, _) = pieces[k];
                vec![rng.random_range(l..h)]
            }
            TruePrior::Gumbel { loc, scale } => {
                let u: f64 = open_unit(rng);
                vec![loc - scale * (-u.ln()).ln()]
            }
            TruePrior::Beta { a, b } => vec![BetaDist::new(*a, *b).expect("validated").sample(rng)],
            TruePrior::Gaussian { mean, sd } => vec![NormalDist::new(*mean, *sd).expect("validated").sample(rng)],
            TruePrior::Atoms { atoms } => vec![atoms[pick(rng, atoms.iter().map(|a| a.1))].0],
            TruePrior::BiAtoms { atoms } => atoms[pick(rng, atoms.iter().map(|a| a.1))].0.to_vec(),
            TruePrior::Nig { mu0, lambda, shape, scale } => {
                let precision = Gamma::new(*shape, 1.0 / scale).expect("validated").sample(rng);
                let sigma2 = 1.0 / precision;
                let mu = NormalDist::new(*mu0, (sigma2 / lambda).sqrt()).expect("positive variance").sample(rng);
                vec![mu, sigma2]
            }
        }
    }
}

fn check_masses(masses: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    let mut count = 0;
    for w in masses {
        if !(w >= 0.0) {
            return Err(Error::InvalidInput("atom masses must be nonnegative".into()));
        }
        total += w;
        count += 1;
    }
    if count == 0 || (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput("atom masses must sum to one".into()));
    }
    Ok(())
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.enumerate() {
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Number of points in the W1 integration grid.
pub const W1_POINTS: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1 {
    pub value: f64,
    /// Integration cell width; zero when the integral is exact.
    pub cell_width: f64,
}

/// `∫ |F_true − F_est| dx` over `[lo − 1, hi + 1]`, where `[lo, hi]` covers both the
/// estimate's grid and the prior's support.
///
/// Atomic truths make the integrand piecewise constant, and the integral is then
/// computed exactly. Otherwise a left Riemann sum over [`W1_POINTS`] equispaced points
/// is used.
pub fn w1_distance(est: &MixingPmf, truth: &TruePrior) -> Result<W1> {
    if est.grid().dim() != 1 || truth.dim() != 1 {
        return Err(Error::InvalidInput("W1 is defined for univariate priors".into()));
    }
    truth.validate()?;
    let g = est.grid().values();
    let (tlo, thi) = truth.support();
    let lo = g[0].min(tlo) - 1.0;
    let hi = g[g.len() - 1].max(thi) + 1.0;

    if let TruePrior::Atoms { atoms } = truth {
        let mut breaks: Vec<f64> = g.iter().copied().chain(atoms.iter().map(|a| a.0)).collect();
        breaks.push(hi);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut total = 0.0;
        let mut left = lo;
        for &b in &breaks {
            if b > left {
                total += (truth.cdf(left) - est.cdf(left)).abs() * (b - left);
                left = b;
            }
        }
        return Ok(W1 {
            value: total,
            cell_width: 0.0,
        });
    }

    let cells = W1_POINTS - 1;
    let dx = (hi - lo) / cells as f64;
    let mut total = 0.0;
    for k in 0..cells {
        let x = lo + k as f64 * dx;
        total += (truth.cdf(x) - est.cdf(x)).abs();
    }
    Ok(W1 {
        value: total * dx,
        cell_width: dx,
    })
}

/// W1 between two univariate PMFs (exact).
pub fn w1_between(a: &MixingPmf, b: &MixingPmf) -> Result<f64> {
    Ok(w1_distance(a, &TruePrior::from_pmf(b)?)?.value)
}

/// Points in the quadrature for continuous priors.
pub const QUADRATURE_POINTS: usize = 10_001;

/// `E[θ | y_i]` under the true prior. Atomic priors use exact sums; continuous
/// univariate priors use cell masses `F(x_{k+1}) − F(x_k)` placed at cell midpoints on
/// a [`QUADRATURE_POINTS`]-point grid over the support.
///
/// Returns one row per observation with one entry per coordinate of `θ`.
pub fn true_posterior_means(truth: &TruePrior, spec: &KernelSpec, data: &Observations) -> Result<Vec<Vec<f64>>> {
    truth.validate()?;
    let (nodes, masses): (Vec<Vec<f64>>, Vec<f64>) = match truth {
        TruePrior::Atoms { atoms } => atoms.iter().map(|(t, w)| (vec![*t], *w)).unzip(),
        TruePrior::BiAtoms { atoms } => atoms.iter().map(|(t, w)| (t.to_vec(), *w)).unzip(),
        TruePrior::Nig { .. } => {
            return Err(Error::InvalidInput(
                "true posterior means are not available for the NIG prior".into(),
            ))
        }
        _ => {
            let (lo, hi) = truth.support();
            let cells = QUADRATURE_POINTS - 1;
            let dx = (hi - lo) / cells as f64;
            let mut prev = truth.cdf(lo);
            let captured = truth.cdf(hi) - prev;
            if captured < 1.0 - 1e-8 {
                return Err(Error::Degenerate(format!(
                    "quadrature range captures only {captured} of the prior mass"
                )));
            }
            (0..cells)
                .map(|k| {
                    let right = truth.cdf(lo + (k + 1) as f64 * dx);
                    let mass = right - prev;
                    prev = right;
                    (vec![lo + (k as f64 + 0.5) * dx], mass)
                })
                .unzip()
        }
    };
    if spec.param_dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            context: "kernel parameter dimension vs prior",
            expected: truth.dim(),
            found: spec.param_dim(),
        });
    }
    let mut out = Vec::with_capacity(data.len());
    let mut logs = vec![0.0; nodes.len()];
    for i in 0..data.len() {
        let y = data.row(i).to_vec();
        for (l, node) in logs.iter_mut().zip(&nodes) {
            *l = spec.log_density(&y, node)?;
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::Degenerate(format!("observation {i} has zero density under the true prior")));
        }
        let mut den = 0.0;
        let mut num = vec![0.0; truth.dim()];
        for ((l, node), w) in logs.iter().zip(&nodes).zip(&masses) {
            let a = w * (l - top).exp();
            den += a;
            for (nk, t) in num.iter_mut().zip(node) {
                *nk += a * t;
            }
        }
        out.push(num.into_iter().map(|v| v / den).collect());
    }
    Ok(out)
}

/// `(1/n) Σ |a_i − b_i|`.
pub fn bayes_mae(est_means: &[f64], true_means: &[f64]) -> Result<f64> {
    if est_means.len() != true_means.len() {
        return Err(Error::DimensionMismatch {
            context: "posterior mean vectors",
            expected: true_means.len(),
            found: est_means.len(),
        });
    }
    if est_means.is_empty() {
        return Err(Error::InvalidInput("no posterior means".into()));
    }
    Ok(est_means.iter().zip(true_means).map(|(a, b)| (a - b).abs()).sum::<f64>() / est_means.len() as f64)
}

/// `Σ_c |O_c − n_k Σ_j f(c|θ_j) w_j|` over the supplied `(count value, observed
/// frequency)` cells.
pub fn chi2_mae(observed: &[(f64, f64)], est: &MixingPmf, spec: &KernelSpec, n_k: f64) -> Result<f64> {
    if !matches!(spec, KernelSpec::Poisson) {
        return Err(Error::InvalidInput("the count-fit statistic needs a count kernel".into()));
    }
    let mut total = 0.0;
    for &(c, o) in observed {
        let mut e = 0.0;
        for (j, w) in est.weights().iter().enumerate() {
            e += spec.log_density(&[c], est.grid().point(j))?.exp() * w;
        }
        total += (o - n_k * e).abs();
    }
    Ok(total)
}

/// Observed frequency of each distinct value, sorted by value.
pub fn count_histogram(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, f64)> = Vec::new();
    for v in sorted {
        match out.last_mut() {
            Some((c, o)) if *c == v => *o += 1.0,
            _ => out.push((v, 1.0)),
        }
    }
    out
}

/// Partition of `0..n` into `K` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: Vec<Vec<usize>>,
    n: usize,
}

impl FoldPlan {
    /// Seeded shuffle, then contiguous blocks whose sizes differ by at most one.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidInput(format!("need 1 <= K <= n (K = {k}, n = {n})")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let base = n / k;
        let extra = n % k;
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            folds.push(order[start..start + len].to_vec());
            start += len;
        }
        Ok(FoldPlan { folds, n })
    }

    /// Explicit folds; they must partition `0..n`.
    pub fn from_folds(n: usize, folds: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in folds.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::InvalidInput("folds must partition 0..n".into()));
            }
            seen[i] = true;
        }
        if folds.is_empty() || seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("folds must partition 0..n".into()));
        }
        Ok(FoldPlan { folds, n })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    /// Indices used for fitting when fold `f` is held out. With one fold, all data.
    pub fn training(&self, f: usize) -> Vec<usize> {
        if self.folds.len() == 1 {
            return (0..self.n).collect();
        }
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Per-fold and overall predictive log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub pll: f64,
    /// `Σ_{i in fold} −2 log p̂(y_i)` for each fold.
    pub fold_scores: Vec<f64>,
}

/// `(1/K) Σ_k Σ_{i ∈ fold k} −2 log Σ_j f(y_i|θ_j) ŵ_j^(−k)`, where `ŵ^(−k)` is fitted by
/// `fit` on the other folds.
pub fn cv_pll<F>(data: &Observations, spec: &KernelSpec, grid: &Grid, mut fit: F, plan: &FoldPlan) -> Result<CvReport>
where
    F: FnMut(&Observations) -> Result<MixingPmf>,
{
    if plan.n != data.len() {
        return Err(Error::DimensionMismatch {
            context: "fold plan vs data",
            expected: data.len(),
            found: plan.n,
        });
    }
    let mut fold_scores = Vec::with_capacity(plan.k());
    for (f, held) in plan.folds().iter().enumerate() {
        let pmf = fit(&data.select(&plan.training(f)))?;
        if pmf.grid() != grid {
            return Err(Error::InvalidInput("estimator returned a PMF on a different grid".into()));
        }
        let test = data.select(held);
        let kernel = build_kernel_matrix(spec, &test, grid).map_err(|e| match e {
            Error::ZeroLikelihoodRow { row } => Error::Degenerate(format!(
                "held-out observation {} has zero predictive density",
                held[row]
            )),
            other => other,
        })?;
        let mut score = 0.0;
        for (r, p) in kernel.row_mixtures(pmf.weights()).into_iter().enumerate() {
            if !(p > 0.0) {
                return Err(Error::Degenerate(format!(
                    "held-out observation {} has zero predictive density",
                    held[r]
                )));
            }
            score -= 2.0 * p.ln();
        }
        fold_scores.push(score);
    }
    let pll = fold_scores.iter().sum::<f64>() / plan.k() as f64;
    Ok(CvReport { pll, fold_scores })
}

/// Flat metrics record written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub w1: Option<f64>,
    /// Integration cell width of `w1`; 0 when it was computed exactly.
    #[serde(default)]
    pub w1_cell: Option<f64>,
    pub mae: Option<f64>,
    pub chi2_mae: Option<f64>,
    pub pll: Option<f64>,
    pub n: usize,
    pub m: usize,
    pub seed: Option<u64>,
    pub estimator: Option<String>,
    pub elapsed_seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::mixture_nll;
    use proptest::prelude::*;
    use rand::Rng;

    fn pmf(points: Vec<f64>, w: Vec<f64>) -> MixingPmf {
        MixingPmf::new(Grid::univariate(points).unwrap(), w).unwrap()
    }

    #[test]
    fn w1_identical_and_atoms() {
        let p = pmf(vec![-1.0, 0.0, 2.0], vec![0.2, 0.5, 0.3]);
        let truth = TruePrior::from_pmf(&p).unwrap();
        assert_eq!(w1_distance(&p, &truth).unwrap().value, 0.0);

        let a = pmf(vec![0.5], vec![1.0]);
        let r = w1_distance(&a, &TruePrior::Atoms { atoms: vec![(3.0, 1.0)] }).unwrap();
        assert!((r.value - 2.5).abs() < 1e-12);
        // The Riemann rule on a continuous truth stays within a cell of the exact answer.
        let u = w1_distance(&a, &TruePrior::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        assert!((u.value - 0.25).abs() <= u.cell_width);
    }

    #[test]
    fn w1_matches_cumulative_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = Grid::equispaced(-3.0, 4.0, 25).unwrap();
        for _ in 0..50 {
            let a: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
            let pa = MixingPmf::from_unnormalized(grid.clone(), a).unwrap();
            let pb = MixingPmf::from_unnormalized(grid.clone(), b).unwrap();
            let g = grid.values();
            let (mut ca, mut cb, mut oracle) = (0.0, 0.0, 0.0);
            for j in 0..24 {
                ca += pa.weights()[j];
                cb += pb.weights()[j];
                oracle += (ca - cb).abs() * (g[j + 1] - g[j]);
            }
            assert!((w1_between(&pa, &pb).unwrap() - oracle).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn w1_metric_axioms(
            a in proptest::collection::vec(0.001f64..1.0, 12),
            b in proptest::collection::vec(0.001f64..1.0, 12),
            c in proptest::collection::vec(0.001f64..1.0, 12),
        ) {
            let grid = Grid::equispaced(-2.0, 5.0, 12).unwrap();
            let pa = MixingPmf::from_unnormalized(grid.clone(), a).unwrap();
            let pb = MixingPmf::from_unnormalized(grid.clone(), b).unwrap();
            let pc = MixingPmf::from_unnormalized(grid, c).unwrap();
            let ab = w1_between(&pa, &pb).unwrap();
            prop_assert!((ab - w1_between(&pb, &pa).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= w1_between(&pa, &pc).unwrap() + w1_between(&pc, &pb).unwrap() + 1e-12);
            prop_assert_eq!(w1_between(&pa, &pa).unwrap(), 0.0);
        }

        #[test]
        fn chi2_mae_ignores_cell_order(mut cells in proptest::collection::vec((0u32..15, 0u32..50), 1..10)) {
            let grid = Grid::univariate(vec![1.0, 4.0]).unwrap();
            let est = MixingPmf::new(grid, vec![0.3, 0.7]).unwrap();
            let as_f = |v: &[(u32, u32)]| v.iter().map(|&(c, o)| (c as f64, o as f64)).collect::<Vec<_>>();
            let first = chi2_mae(&as_f(&cells), &est, &KernelSpec::Poisson, 200.0).unwrap();
            cells.reverse();
            let second = chi2_mae(&as_f(&cells), &est, &KernelSpec::Poisson, 200.0).unwrap();
            prop_assert!((first - second).abs() < 1e-9);
        }
    }

    #[test]
    fn posterior_means_of_truth() {
        let atom = TruePrior::Atoms { atoms: vec![(0.0, 1.0)] };
        let y = Observations::univariate(&[-1.0, 2.0, 5.0]);
        let spec = KernelSpec::NormalLocation { sigma: 1.0 };
        for m in true_posterior_means(&atom, &spec, &y).unwrap() {
            assert_eq!(m, vec![0.0]);
        }

        let ys: Vec<f64> = (-30..=30).map(|k| k as f64 / 10.0).collect();
        let gauss = TruePrior::Gaussian { mean: 0.0, sd: 1.0 };
        let got = true_posterior_means(&gauss, &spec, &Observations::univariate(&ys)).unwrap();
        for (m, y) in got.iter().zip(&ys) {
            assert!((m[0] - y / 2.0).abs() < 1e-6, "y = {y}: {}", m[0]);
        }

        let unif = TruePrior::Uniform { lo: -2.0, hi: 2.0 };
        let zero = true_posterior_means(&unif, &spec, &Observations::univariate(&[0.0])).unwrap();
        assert!(zero[0][0].abs() < 1e-12);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(bayes_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let a = [0.3, -1.2, 4.0];
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((bayes_mae(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!(bayes_mae(&a, &b[..2]).is_err());
    }

    #[test]
    fn chi2_mae_examples() {
        // Single support point with λ = 1 and n_k chosen so E_0 = 3.
        let est = pmf(vec![1.0], vec![1.0]);
        let n_k = 3.0 / (-1.0f64).exp();
        assert!((chi2_mae(&[(0.0, 5.0)], &est, &KernelSpec::Poisson, n_k).unwrap() - 2.0).abs() < 1e-12);
        assert!((chi2_mae(&[(0.0, 3.0)], &est, &KernelSpec::Poisson, n_k).unwrap()).abs() < 1e-12);

        // Two-point Poisson mixture against a hand-built expected-frequency table.
        let est = pmf(vec![1.0, 5.0], vec![0.4, 0.6]);
        let pois = |c: u32, l: f64| l.powi(c as i32) * (-l).exp() / (1..=c).map(f64::from).product::<f64>();
        let obs: Vec<(f64, f64)> = (0..8).map(|c| (c as f64, [12.0, 20.0, 15.0, 14.0, 16.0, 13.0, 6.0, 4.0][c])).collect();
        let expected: f64 = obs
            .iter()
            .map(|&(c, o)| (o - 100.0 * (0.4 * pois(c as u32, 1.0) + 0.6 * pois(c as u32, 5.0))).abs())
            .sum();
        assert!((chi2_mae(&obs, &est, &KernelSpec::Poisson, 100.0).unwrap() - expected).abs() < 1e-10);
        assert_eq!(count_histogram(&[2.0, 0.0, 2.0, 1.0]), vec![(0.0, 1.0), (1.0, 1.0), (2.0, 2.0)]);
    }

    #[test]
    fn fold_plans() {
        let plan = FoldPlan::new(23, 5, 1).unwrap();
        let sizes: Vec<usize> = plan.folds().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<usize> = plan.folds().concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(plan, FoldPlan::new(23, 5, 1).unwrap());
        assert!(FoldPlan::new(3, 4, 0).is_err());
        assert!(FoldPlan::new(3, 0, 0).is_err());
    }

    #[test]
    fn cv_self_scoring_and_two_fold_oracle() {
        let y: Vec<f64> = (0..20).map(|i| (i % 7) as f64).collect();
        let data = Observations::univariate(&y);
        let grid = Grid::equispaced(0.0, 8.0, 9).unwrap();
        let uniform = MixingPmf::uniform(grid.clone());
        let spec = KernelSpec::Poisson;

        let one = FoldPlan::new(20, 1, 0).unwrap();
        let r = cv_pll(&data, &spec, &grid, |_| Ok(uniform.clone()), &one).unwrap();
        let kernel = build_kernel_matrix(&spec, &data, &grid).unwrap();
        let nll = mixture_nll(&kernel, &uniform).unwrap();
        assert!((r.pll - 2.0 * 20.0 * nll).abs() < 1e-9);

        let plan = FoldPlan::from_folds(20, vec![(0..10).collect(), (10..20).collect()]).unwrap();
        let r = cv_pll(&data, &spec, &grid, |_| Ok(uniform.clone()), &plan).unwrap();
        let pois = |c: f64, l: f64| {
            let mut v = (-l).exp();
            for k in 1..=(c as u32) {
                v *= l / k as f64;
            }
            v
        };
        let score = |idx: std::ops::Range<usize>| -> f64 {
            idx.map(|i| {
                let p: f64 = grid.values().iter().map(|t| pois(y[i], *t) / 9.0).sum();
                -2.0 * p.ln()
            })
            .sum()
        };
        let oracle = (score(0..10) + score(10..20)) / 2.0;
        assert!((r.pll - oracle).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        // A point-mass prior at θ = 0 predicts y = 0 with probability one.
        let grid = Grid::univariate(vec![0.0, 1.0]).unwrap();
        let data = Observations::univariate(&[0.0; 6]);
        let delta = MixingPmf::point_mass(grid.clone(), 0).unwrap();
        let plan = FoldPlan::new(6, 3, 0).unwrap();
        let r = cv_pll(&data, &KernelSpec::Poisson, &grid, |_| Ok(delta.clone()), &plan).unwrap();
        assert_eq!(r.pll, 0.0);
    }

    #[test]
    fn samplers_match_cdfs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = TruePrior::Gumbel { loc: 2.0, scale: 1.0 };
        let mut xs: Vec<f64> = (0..100_000).map(|_| g.sample(&mut rng)[0]).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = g.cdf(*x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS {ks}");

        let nig = TruePrior::Nig { mu0: 1.0, lambda: 1.0, shape: 2.0, scale: 0.5 };
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| nig.sample(&mut rng)).collect();
        let mean_mu = draws.iter().map(|d| d[0]).sum::<f64>() / n;
        let mean_s2 = draws.iter().map(|d| d[1]).sum::<f64>() / n;
        assert!((mean_mu - 1.0).abs() < 0.02);
        assert!((mean_s2 - 0.5).abs() < 0.02);
    }
}
