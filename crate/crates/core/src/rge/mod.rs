//! Robust gradient estimation by spectral outlier filtering.
//!
//! [`estimate`] keeps a soft weight `c_i ∈ [0, 1]` per received gradient and an
//! active set `A = {i : c_i ≥ 1/2}`. Each round it solves the reconstruction
//! saddle problem on `A` ([`saddle::solve_saddle`]); if the weighted error
//! `Σ_{i∈A} c_i τ_i` exceeds `4 m σ₀²` the weights shrink by `1 − τ_i/τ_max`
//! and columns below one half are dropped ([`filter_round`]). Otherwise the
//! mean of the active columns is returned.

pub mod bounds;
pub mod concentration;
pub mod saddle;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use bounds::{default_sigma0_sq, default_sigma0_sq_compressed, UPSILON_CONST};
pub use concentration::{full_batch_concentration_check, max_eig_deviation};
pub use saddle::{column_fit, solve_saddle, SaddleSolution};

/// `m` received gradients in `R^d`, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl GradientMatrix {
    pub fn zeros(dim: usize, count: usize) -> Self {
        Self { dim, data: vec![0.0; dim * count] }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dim = columns.first().map(|c| c.len()).ok_or(Error::InvalidParameter("no columns".into()))?;
        let mut data = Vec::with_capacity(dim * columns.len());
        for c in columns {
            if c.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.len() });
            }
            data.extend_from_slice(c);
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("zero-dimensional columns".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean of the columns with the given indices.
    pub fn mean_of(&self, idx: &[usize]) -> Vec<f64> {
        linalg::mean(idx.iter().map(|&i| self.column(i)))
    }

    /// Largest column norm; the scale of the rounding noise in residuals.
    pub fn max_column_norm(&self) -> f64 {
        self.columns().map(linalg::norm).fold(0.0, f64::max)
    }
}

/// Relative size of residuals indistinguishable from rounding error.
pub const NOISE_REL: f64 = 1e-10;

/// Below this `τ_max` a failed threshold test is treated as inconsistent input.
pub const TAU_FLOOR: f64 = 1e-18;

/// Live state of the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    /// `c_i` for every column (removed columns keep their last weight).
    pub weights: Vec<f64>,
    /// Active indices in increasing order.
    pub active: Vec<usize>,
    /// `α = 1 − ε̃`.
    pub alpha: f64,
    pub sigma0_sq: f64,
    /// `Φ` at or below this value stops the filter: `4 m σ₀²` plus a rounding
    /// allowance of `m (NOISE_REL · max ‖g_i‖)²`.
    pub threshold: f64,
    /// Down-weighting steps taken so far.
    pub rounds: usize,
}

impl FilterState {
    pub fn new(g: &GradientMatrix, sigma0_sq: f64, eps_tilde: f64) -> Self {
        let m = g.len();
        let scale = NOISE_REL * g.max_column_norm();
        Self {
            weights: vec![1.0; m],
            active: (0..m).collect(),
            alpha: 1.0 - eps_tilde,
            sigma0_sq,
            threshold: 4.0 * m as f64 * sigma0_sq + m as f64 * scale * scale,
            rounds: 0,
        }
    }

    /// Cap `(4 − α) / (α (2 + α) m)` on every reconstruction weight.
    pub fn cap(&self) -> f64 {
        weight_cap(self.alpha, self.weights.len())
    }

    pub fn active_weights(&self) -> Vec<f64> {
        self.active.iter().map(|&i| self.weights[i]).collect()
    }
}

pub fn weight_cap(alpha: f64, m: usize) -> f64 {
    (4.0 - alpha) / (alpha * (2.0 + alpha) * m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub state: FilterState,
    pub terminated: bool,
    /// Indices dropped from the active set this round.
    pub removed: Vec<usize>,
    /// Indices attaining `τ_max` this round.
    pub argmax: Vec<usize>,
}

/// One pass of the threshold test and multiplicative down-weighting.
pub fn filter_round(state: &FilterState, sol: &SaddleSolution) -> Result<RoundOutcome> {
    if sol.tau.len() != state.active.len() {
        return Err(Error::DimensionMismatch { expected: state.active.len(), got: sol.tau.len() });
    }
    let weighted: f64 = state.active.iter().zip(&sol.tau).map(|(&i, t)| state.weights[i] * t).sum();
    if weighted <= state.threshold {
        return Ok(RoundOutcome { state: state.clone(), terminated: true, removed: Vec::new(), argmax: Vec::new() });
    }
    let tau_max = sol.tau.iter().copied().fold(0.0, f64::max);
    if !(tau_max >= TAU_FLOOR) || !tau_max.is_finite() {
        return Err(Error::NumericalFloor { tau_max });
    }
    let mut next = state.clone();
    let mut argmax = Vec::new();
    for (&i, &t) in state.active.iter().zip(&sol.tau) {
        if t == tau_max {
            next.weights[i] = 0.0;
            argmax.push(i);
        } else {
            next.weights[i] *= 1.0 - t / tau_max;
        }
    }
    let (kept, removed): (Vec<usize>, Vec<usize>) = state.active.iter().partition(|&&i| next.weights[i] >= 0.5);
    next.active = kept;
    next.rounds += 1;
    if next.active.is_empty() {
        return Err(Error::FilterCollapsed { rounds: next.rounds });
    }
    Ok(RoundOutcome { state: next, terminated: false, removed, argmax })
}

/// Per-round record kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub phi: f64,
    pub active_before: usize,
    pub removed: Vec<usize>,
    pub argmax: Vec<usize>,
    pub saddle_converged: bool,
    pub alternations: usize,
}

/// Diagnostics of one [`estimate`] call. Serializes to
/// `{rounds, active_indices, removed_indices, phi_trace, converged, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Down-weighting steps (0 when the first test already passes).
    pub rounds: usize,
    pub active_indices: Vec<usize>,
    pub removed_indices: Vec<usize>,
    /// `Φ` of every saddle solve, the last one at termination.
    pub phi_trace: Vec<f64>,
    /// Every saddle solve met its alternation tolerance.
    pub converged: bool,
    /// Final weights `c_i`.
    pub final_weights: Vec<f64>,
    /// Weights after each round, starting with the all-ones vector.
    pub weight_trace: Vec<Vec<f64>>,
    pub history: Vec<RoundRecord>,
    pub cap: f64,
    pub threshold: f64,
}

impl FilterReport {
    pub fn final_phi(&self) -> f64 {
        self.phi_trace.last().copied().unwrap_or(0.0)
    }
}

/// Runs the filter on `g` and returns the mean of the surviving columns.
///
/// Requires `ε̃ ≤ 1/4` and at least two columns. Fails with
/// [`Error::FilterCollapsed`] if every column is dropped and with
/// [`Error::Infeasible`] once fewer than `⌈1/cap⌉` columns remain active.
pub fn estimate(g: &GradientMatrix, sigma0_sq: f64, eps_tilde: f64) -> Result<(Vec<f64>, FilterReport)> {
    if !(0.0..=0.25).contains(&eps_tilde) {
        return Err(Error::InvalidParameter(alloc::format!("eps_tilde must lie in [0, 1/4], got {eps_tilde}")));
    }
    if g.len() < 2 {
        return Err(Error::InvalidParameter("at least two gradients are required".into()));
    }
    if !(sigma0_sq >= 0.0) || !sigma0_sq.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!(
            "sigma0_sq must be finite and nonnegative, got {sigma0_sq}"
        )));
    }
    if !g.is_finite() {
        return Err(Error::InvalidParameter("non-finite gradient entries".into()));
    }
    let m = g.len();
    let mut state = FilterState::new(g, sigma0_sq, eps_tilde);
    let cap = state.cap();
    let mut phi_trace = Vec::new();
    let mut history = Vec::new();
    let mut weight_trace = vec![state.weights.clone()];
    let mut converged = true;
    loop {
        let c = state.active_weights();
        let sol = solve_saddle(g, &state.active, &c, cap)?;
        phi_trace.push(sol.phi);
        converged &= sol.converged;
        let active_before = state.active.len();
        let outcome = filter_round(&state, &sol)?;
        history.push(RoundRecord {
            phi: sol.phi,
            active_before,
            removed: outcome.removed.clone(),
            argmax: outcome.argmax.clone(),
            saddle_converged: sol.converged,
            alternations: sol.alternations,
        });
        if outcome.terminated {
            break;
        }
        state = outcome.state;
        weight_trace.push(state.weights.clone());
        debug_assert!(state.rounds <= m);
    }
    let ghat = g.mean_of(&state.active);
    let removed_indices = (0..m).filter(|i| state.active.binary_search(i).is_err()).collect();
    let report = FilterReport {
        rounds: state.rounds,
        active_indices: state.active.clone(),
        removed_indices,
        phi_trace,
        converged,
        final_weights: state.weights.clone(),
        weight_trace,
        history,
        cap,
        threshold: state.threshold,
    };
    Ok((ghat, report))
}

/// Structural checks on a finished filter run: at most `m` rounds, weights in
/// `[0, 1]` and non-increasing, every round drops all of its `τ_max` columns,
/// and the final active set keeps at least `⌈1/cap⌉` columns.
pub fn check_report_invariants(report: &FilterReport, m: usize) -> core::result::Result<(), &'static str> {
    if report.rounds > m {
        return Err("more filter rounds than columns");
    }
    for w in &report.weight_trace {
        if w.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("weight outside [0, 1]");
        }
    }
    for pair in report.weight_trace.windows(2) {
        if pair[0].iter().zip(&pair[1]).any(|(a, b)| b > a) {
            return Err("weight increased between rounds");
        }
    }
    for rec in &report.history[..report.rounds.min(report.history.len())] {
        if rec.argmax.is_empty() || rec.argmax.iter().any(|i| !rec.removed.contains(i)) {
            return Err("a maximal-error column survived its round");
        }
    }
    if report.active_indices.len() < saddle::min_support(report.cap) {
        return Err("active set below the feasibility floor");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{stream, StreamTag};

    fn sol_with_tau(tau: Vec<f64>) -> SaddleSolution {
        SaddleSolution {
            weights: Vec::new(),
            direction: Vec::new(),
            phi: tau.iter().sum(),
            tau,
            converged: true,
            alternations: 1,
            certificate_gap: 0.0,
        }
    }

    fn state(m: usize, threshold: f64) -> FilterState {
        FilterState {
            weights: vec![1.0; m],
            active: (0..m).collect(),
            alpha: 0.8,
            sigma0_sq: threshold / (4.0 * m as f64),
            threshold,
            rounds: 0,
        }
    }

    #[test]
    fn zero_error_terminates() {
        let out = filter_round(&state(2, 0.0), &sol_with_tau(vec![0.0, 0.0])).unwrap();
        assert!(out.terminated);
    }

    #[test]
    fn hand_downweighting() {
        let out = filter_round(&state(2, 0.1), &sol_with_tau(vec![2.0, 1.0])).unwrap();
        assert!(!out.terminated);
        assert_eq!(out.state.weights, vec![0.0, 0.5]);
        assert_eq!(out.state.active, vec![1]);
        assert_eq!(out.removed, vec![0]);
    }

    #[test]
    fn equal_errors_collapse() {
        let err = filter_round(&state(3, 0.1), &sol_with_tau(vec![1.0, 1.0, 1.0])).unwrap_err();
        assert_eq!(err, Error::FilterCollapsed { rounds: 1 });
    }

    #[test]
    fn identical_columns_exact() {
        let g = GradientMatrix::from_columns(&vec![vec![0.1, -3.0, 2.5]; 6]).unwrap();
        let (ghat, report) = estimate(&g, 0.0, 0.2).unwrap();
        assert_eq!(report.rounds, 0);
        assert_eq!(ghat, g.mean_of(&[0, 1, 2, 3, 4, 5]));
        assert!(linalg::dist(&ghat, g.column(0)) < 1e-15);
    }

    #[test]
    fn planted_majority() {
        let g0 = vec![1.0, -2.0, 0.5, 3.0];
        let mut cols = vec![g0.clone(); 8];
        let mut bad = g0.clone();
        bad[0] += 100.0;
        cols.push(bad.clone());
        cols.push(bad);
        let g = GradientMatrix::from_columns(&cols).unwrap();
        let (ghat, report) = estimate(&g, 1.0, 0.2).unwrap();
        assert!(linalg::dist(&ghat, &g0) < 1e-6);
        assert_eq!(report.removed_indices, vec![8, 9]);
        check_report_invariants(&report, 10).unwrap();
    }

    #[test]
    fn rejects_large_eps() {
        let g = GradientMatrix::from_columns(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(estimate(&g, 1.0, 0.3).is_err());
    }

    #[test]
    fn planted_gaussian_shift() {
        use crate::datagen::{planted_gradients, PlantedOutliers};
        let inst =
            planted_gradients(&mut stream(11, StreamTag::Data, 0, 0), 50, 20, 1.0, 0.2, PlantedOutliers::Shift, 50.0)
                .unwrap();
        let g = GradientMatrix::from_columns(&inst.columns).unwrap();
        let (ghat, report) = estimate(&g, 1.0, 0.2).unwrap();
        let err = linalg::dist(&ghat, &inst.inlier_mean);
        assert!(err <= UPSILON_CONST * libm::sqrt(0.2), "err {err}");
        check_report_invariants(&report, 50).unwrap();
        for i in 40..50 {
            assert!(report.removed_indices.contains(&i));
        }
    }
}
