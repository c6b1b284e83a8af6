//! Weighted-average-gradient (WAG) descent and the neural-g training loop.
//!
//! Each step moves against `w·g_t + (1-w)·ḡ`, where `g_t` is the current minibatch
//! gradient and `ḡ` is the plain average of the minibatch gradients from iterations
//! `1..t-2`. The gradient from iteration `t-1` therefore joins the average one step
//! late; a one-slot queue holds it until then.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{build_kernel_matrix, nll_from_weights, Grid, KernelMatrix, KernelSpec, MixingPmf, Observations};
use crate::error::{Error, Result};
use crate::mlp::{ForwardPass, MlpArchitecture, MlpModel, ParamSet};
use crate::rng::derive_seed;

/// Vector-space operations the WAG update needs.
pub trait ParamVector: Clone {
    fn zeros_like(&self) -> Self;
    /// `self += a · x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);
    fn all_finite(&self) -> bool;
    fn same_shape(&self, other: &Self) -> bool;
}

impl ParamVector for ParamSet {
    fn zeros_like(&self) -> Self {
        ParamSet::zeros_like(self)
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        ParamSet::axpy(self, a, x)
    }
    fn scale(&mut self, a: f64) {
        ParamSet::scale(self, a)
    }
    fn all_finite(&self) -> bool {
        ParamSet::all_finite(self)
    }
    fn same_shape(&self, other: &Self) -> bool {
        ParamSet::same_shape(self, other)
    }
}

impl ParamVector for Vec<f64> {
    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += a * v;
        }
    }
    fn scale(&mut self, a: f64) {
        for s in self.iter_mut() {
            *s *= a;
        }
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len()
    }
}

/// Optimizer and stopping-rule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Minibatch size `S`.
    pub batch_size: usize,
    /// Epoch budget `E`.
    pub max_epochs: usize,
    /// Weight `w` on the current gradient; `1 - w` goes to the history average.
    pub weight: f64,
    /// Base step `η`; iteration `t` uses `η·t^(-step_decay)`.
    pub base_step: f64,
    pub step_decay: f64,
    /// Stop once `|ℓ(t) - ℓ(t-c)| < stop_tol`.
    pub stop_tol: f64,
    /// Lag `c` of the stopping rule, in iterations.
    pub stop_lag: usize,
    pub seed: u64,
    /// Evaluate the full-data loss every `loss_every` iterations (1 = every iteration).
    #[serde(default = "one")]
    pub loss_every: usize,
}

fn one() -> usize {
    1
}

/// `⌈n/10⌉`, capped at 512.
pub fn default_batch_size(n: usize) -> usize {
    n.div_ceil(10).clamp(1, 512)
}

impl TrainConfig {
    /// `w = 0.6`, `η = 3e-4` decaying as `t^-0.2`, `E = 8000`, `ε = 0.01`, `c = 10`.
    pub fn defaults_for(n: usize, seed: u64) -> Self {
        TrainConfig {
            batch_size: default_batch_size(n),
            max_epochs: 8000,
            weight: 0.6,
            base_step: 3e-4,
            step_decay: 0.2,
            stop_tol: 0.01,
            stop_lag: 10,
            seed,
            loss_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("train config: {msg}")));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return bad("weight must lie in [0, 1]");
        }
        if !(self.base_step > 0.0 && self.base_step.is_finite()) {
            return bad("base_step must be positive");
        }
        if !self.step_decay.is_finite() {
            return bad("step_decay must be finite");
        }
        if !(self.stop_tol > 0.0) {
            return bad("stop_tol must be positive");
        }
        if self.stop_lag == 0 {
            return bad("stop_lag must be >= 1");
        }
        if self.loss_every == 0 {
            return bad("loss_every must be >= 1");
        }
        Ok(())
    }
}

/// `η · t^(-a)`.
pub fn step_size(t: usize, cfg: &TrainConfig) -> f64 {
    assert!(t >= 1, "iterations are counted from 1");
    cfg.base_step * (t as f64).powf(-cfg.step_decay)
}

/// Gradient bookkeeping for [`wag_step`].
#[derive(Debug, Clone)]
pub struct WagState<P> {
    iteration: usize,
    history_sum: Option<P>,
    history_count: usize,
    /// Gradient of the previous iteration, not yet part of the history.
    pending: Option<P>,
}

impl<P: ParamVector> Default for WagState<P> {
    fn default() -> Self {
        WagState {
            iteration: 0,
            history_sum: None,
            history_count: 0,
            pending: None,
        }
    }
}

impl<P: ParamVector> WagState<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of completed steps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Number of gradients in the history average.
    pub fn history_len(&self) -> usize {
        self.history_count
    }

    /// Average of the gradients from iterations `1..t-2`, where `t` is the next step.
    pub fn history_mean(&self) -> Option<P> {
        self.history_sum.as_ref().map(|s| {
            let mut m = s.clone();
            m.scale(1.0 / self.history_count as f64);
            m
        })
    }
}

/// One WAG update of `params` with the current minibatch gradient.
///
/// Steps 1 and 2 have an empty history and move along `g_current` alone.
pub fn wag_step<P: ParamVector>(params: &mut P, state: &mut WagState<P>, g_current: P, cfg: &TrainConfig) -> Result<()> {
    let t = state.iteration + 1;
    if !g_current.same_shape(params) {
        return Err(Error::InvalidInput("gradient shape does not match parameters".into()));
    }
    if !g_current.all_finite() {
        return Err(Error::Training {
            iteration: t,
            batch: 0,
            reason: "non-finite gradient".into(),
        });
    }
    let eta = step_size(t, cfg);
    match state.history_mean() {
        Some(mean) => {
            params.axpy(-eta * cfg.weight, &g_current);
            params.axpy(-eta * (1.0 - cfg.weight), &mean);
        }
        None => params.axpy(-eta, &g_current),
    }
    if let Some(prev) = state.pending.take() {
        match state.history_sum.as_mut() {
            Some(sum) => sum.axpy(1.0, &prev),
            None => state.history_sum = Some(prev),
        }
        state.history_count += 1;
    }
    state.pending = Some(g_current);
    state.iteration = t;
    Ok(())
}

/// Shuffles `0..n` and cuts it into `⌈n/S⌉` consecutive batches.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(n >= 1 && batch_size >= 1, "need n >= 1 and S >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Full-data losses of the most recent iterations.
#[derive(Debug, Clone)]
pub struct LossHistory {
    capacity: usize,
    entries: VecDeque<(usize, f64)>,
}

impl LossHistory {
    /// Keeps enough entries to look back `lag` iterations.
    pub fn new(lag: usize) -> Self {
        LossHistory {
            capacity: lag + 1,
            entries: VecDeque::with_capacity(lag + 1),
        }
    }

    pub fn push(&mut self, iteration: usize, loss: f64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((iteration, loss));
    }

    pub fn get(&self, iteration: usize) -> Option<f64> {
        self.entries.iter().find(|(t, _)| *t == iteration).map(|(_, l)| *l)
    }
}

/// True iff `t > c` and `|ℓ(t) - ℓ(t-c)| < ε`.
pub fn should_stop(history: &LossHistory, t: usize, cfg: &TrainConfig) -> bool {
    if t <= cfg.stop_lag {
        return false;
    }
    match (history.get(t), history.get(t - cfg.stop_lag)) {
        (Some(now), Some(then)) => (now - then).abs() < cfg.stop_tol,
        _ => false,
    }
}

/// Full optimizer state of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub wag: WagState<ParamSet>,
    pub losses: LossHistory,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            wag: WagState::new(),
            losses: LossHistory::new(cfg.stop_lag),
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM)),
        }
    }
}

/// Stream of `derive_seed(cfg.seed, ·)` used for the weight init.
pub const INIT_STREAM: u64 = 0;
/// Stream used for minibatch shuffling.
pub const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub epoch: usize,
    pub full_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The loss-change rule fired.
    Converged,
    /// All epochs ran.
    EpochBudget,
}

/// Result of a neural-g training run.
#[derive(Debug, Clone)]
pub struct NeuralGFit {
    pub pmf: MixingPmf,
    pub model: MlpModel,
    pub trace: Vec<TraceRow>,
    /// Full-data loss of the initial (uniform) PMF.
    pub initial_loss: f64,
    pub iterations: usize,
    pub epochs: usize,
    pub stop: StopReason,
}

impl NeuralGFit {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(self.initial_loss, |r| r.full_loss)
    }
}

/// Builds the kernel matrix and trains on the raw grid coordinates.
pub fn train_neural_g(
    data: &Observations,
    spec: &KernelSpec,
    grid: &Grid,
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
) -> Result<NeuralGFit> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    let kernel = build_kernel_matrix(spec, data, grid)?;
    fit_neural_g(&kernel, grid, arch, cfg)
}

/// Trains on a precomputed kernel matrix, feeding raw grid coordinates to the network.
pub fn fit_neural_g(kernel: &KernelMatrix, grid: &Grid, arch: &MlpArchitecture, cfg: &TrainConfig) -> Result<NeuralGFit> {
    fit_neural_g_with_inputs(kernel, grid, &grid.to_matrix(), arch, cfg)
}

/// Trains with an explicit `m × d` network input per grid point.
pub fn fit_neural_g_with_inputs(
    kernel: &KernelMatrix,
    grid: &Grid,
    inputs: &Array2<f64>,
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
) -> Result<NeuralGFit> {
    cfg.validate()?;
    arch.validate()?;
    if kernel.ncols() != grid.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel columns vs grid",
            expected: grid.len(),
            found: kernel.ncols(),
        });
    }
    if inputs.nrows() != grid.len() {
        return Err(Error::DimensionMismatch {
            context: "network inputs vs grid",
            expected: grid.len(),
            found: inputs.nrows(),
        });
    }
    let n = kernel.nrows();
    let mut model = MlpModel::init(*arch, derive_seed(cfg.seed, INIT_STREAM))?;
    let mut state = TrainState::new(cfg);
    let mut pass = model.forward_pass(inputs)?;
    let initial_loss = nll_from_weights(kernel, &pass.pmf).map_err(|e| Error::Training {
        iteration: 0,
        batch: 0,
        reason: e.to_string(),
    })?;
    let mut trace = Vec::new();
    let mut stop = StopReason::EpochBudget;
    let mut t = 0;

    'epochs: for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let batches = epoch_batches(n, cfg.batch_size, &mut state.rng);
        for (b, rows) in batches.iter().enumerate() {
            t += 1;
            let dlogits = batch_dlogits(kernel, rows, &pass, t, b)?;
            let grad = model.backward(&pass, &dlogits);
            wag_step(model.params_mut(), &mut state.wag, grad, cfg).map_err(|e| match e {
                Error::Training { reason, .. } => Error::Training { iteration: t, batch: b, reason },
                other => other,
            })?;
            pass = model.forward_pass(inputs)?;
            if t % cfg.loss_every == 0 {
                let loss = nll_from_weights(kernel, &pass.pmf).map_err(|e| Error::Training {
                    iteration: t,
                    batch: b,
                    reason: e.to_string(),
                })?;
                state.losses.push(t, loss);
                trace.push(TraceRow {
                    iteration: t,
                    epoch,
                    full_loss: loss,
                });
                if should_stop(&state.losses, t, cfg) {
                    stop = StopReason::Converged;
                    break 'epochs;
                }
            }
        }
    }

    let pmf = MixingPmf::new(grid.clone(), pass.pmf)?;
    Ok(NeuralGFit {
        pmf,
        model,
        trace,
        initial_loss,
        iterations: t,
        epochs: state.epoch,
        stop,
    })
}

/// `∂(batch loss)/∂logits` for the rows of `kernel` listed in `rows`.
fn batch_dlogits(kernel: &KernelMatrix, rows: &[usize], pass: &ForwardPass, t: usize, b: usize) -> Result<Array1<f64>> {
    let values = kernel.values();
    let pmf = &pass.pmf;
    let mut col = vec![0.0; pmf.len()];
    for &i in rows {
        let row: ArrayView1<f64> = values.row(i);
        let mut mix = 0.0;
        for (f, p) in row.iter().zip(pmf) {
            mix += f * p;
        }
        if !(mix > 0.0 && mix.is_finite()) {
            return Err(Error::Training {
                iteration: t,
                batch: b,
                reason: format!("mixture likelihood of observation {i} is {mix}"),
            });
        }
        let inv = 1.0 / mix;
        for (c, f) in col.iter_mut().zip(row.iter()) {
            *c += f * inv;
        }
    }
    let inv_s = 1.0 / rows.len() as f64;
    Ok(Array1::from_iter(pmf.iter().zip(&col).map(|(p, c)| p * (1.0 - c * inv_s))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cfg(weight: f64) -> TrainConfig {
        TrainConfig {
            batch_size: 1,
            max_epochs: 1,
            weight,
            base_step: 1.0,
            step_decay: 0.0,
            stop_tol: 0.01,
            stop_lag: 10,
            seed: 0,
            loss_every: 1,
        }
    }

    #[test]
    fn step_size_schedule() {
        let cfg = TrainConfig::defaults_for(100, 0);
        assert_eq!(step_size(1, &cfg), 0.0003);
        assert!((step_size(32, &cfg) - 0.00015).abs() < 1e-17);
        for t in 1..500 {
            assert!(step_size(t + 1, &cfg) < step_size(t, &cfg));
        }
    }

    #[test]
    fn weight_one_is_plain_sgd() {
        let cfg = unit_cfg(1.0);
        let mut state = WagState::new();
        let mut x = vec![0.0];
        for g in [3.0, -1.0, 2.0, 5.0] {
            let before = x[0];
            wag_step(&mut x, &mut state, vec![g], &cfg).unwrap();
            assert_eq!(x[0], before - g);
        }
    }

    #[test]
    fn hand_applied_update_at_t3() {
        let cfg = unit_cfg(0.6);
        let mut state = WagState::new();
        let mut x = vec![0.0];
        wag_step(&mut x, &mut state, vec![2.0], &cfg).unwrap(); // t = 1
        wag_step(&mut x, &mut state, vec![7.0], &cfg).unwrap(); // t = 2, history still empty
        assert_eq!(x[0], -9.0);
        assert_eq!(state.history_len(), 1);
        let before = x[0];
        wag_step(&mut x, &mut state, vec![1.0], &cfg).unwrap(); // t = 3, history = {2}
        assert!((before - x[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = unit_cfg(0.6);
        let mut state = WagState::new();
        let mut x = vec![1.5, -2.0];
        for _ in 0..5 {
            wag_step(&mut x, &mut state, vec![0.0, 0.0], &cfg).unwrap();
        }
        assert_eq!(x, vec![1.5, -2.0]);
    }

    #[test]
    fn nonfinite_gradient_aborts() {
        let cfg = unit_cfg(0.6);
        let mut state = WagState::new();
        let mut x = vec![0.0];
        let err = wag_step(&mut x, &mut state, vec![f64::NAN], &cfg).unwrap_err();
        assert!(matches!(err, Error::Training { iteration: 1, .. }));
    }

    #[test]
    fn history_mean_matches_stored_gradients() {
        let cfg = unit_cfg(0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = WagState::new();
        let mut x = vec![0.0; 3];
        let mut seen = Vec::new();
        for _ in 0..200 {
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            seen.push(g.clone());
            wag_step(&mut x, &mut state, g, &cfg).unwrap();
        }
        // After T steps the history holds gradients 1..T-1.
        let mean = state.history_mean().unwrap();
        for k in 0..3 {
            let direct: f64 = seen[..199].iter().map(|g| g[k]).sum::<f64>() / 199.0;
            assert!((mean[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn batches_partition_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(10, 3, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let b = epoch_batches(6, 6, &mut rng);
        assert_eq!(b.len(), 1);
        let mut one = b[0].clone();
        one.sort_unstable();
        assert_eq!(one, (0..6).collect::<Vec<_>>());

        let a = epoch_batches(50, 7, &mut ChaCha8Rng::seed_from_u64(9));
        let c = epoch_batches(50, 7, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, c);
    }

    #[test]
    fn stopping_rule() {
        let cfg = TrainConfig::defaults_for(100, 0);
        let mut flat = LossHistory::new(cfg.stop_lag);
        for t in 1..=11 {
            flat.push(t, 2.5);
        }
        assert!(should_stop(&flat, 11, &cfg));
        assert!(!should_stop(&flat, 10, &cfg));

        let mut falling = LossHistory::new(cfg.stop_lag);
        for t in 1..=30 {
            falling.push(t, 100.0 - t as f64);
        }
        assert!(!should_stop(&falling, 30, &cfg));
    }

    #[test]
    fn config_validation() {
        let good = TrainConfig::defaults_for(10, 0);
        assert!(good.validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..good },
            TrainConfig { max_epochs: 0, ..good },
            TrainConfig { weight: 1.5, ..good },
            TrainConfig { base_step: 0.0, ..good },
            TrainConfig { stop_tol: 0.0, ..good },
            TrainConfig { stop_lag: 0, ..good },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(default_batch_size(4000), 400);
        assert_eq!(default_batch_size(100_000), 512);
        assert_eq!(default_batch_size(3), 1);
    }
}
