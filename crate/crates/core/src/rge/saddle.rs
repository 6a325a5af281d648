//! Alternating best-response solver for the reconstruction saddle problem
//!
//! `max_{Y ⪰ 0, tr Y ≤ 1} min_W Σ_i c_i (g_i − G_A w_i)ᵀ Y (g_i − G_A w_i)`
//!
//! over column-stochastic `W` with entries in `[0, cap]`. For fixed `W` the best
//! `Y` is `v vᵀ` with `v` the principal left singular vector of the weighted
//! residual matrix. For fixed `v = Y`'s direction, each column decouples into
//! a one-dimensional fit handled by [`column_fit`].

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use nalgebra::DMatrix;

use crate::linalg;

use super::GradientMatrix;

pub const MAX_ALTERNATIONS: usize = 100;
pub const ALTERNATION_TOL: f64 = 1e-8;
/// Longest best-response cycle detected before the alternation cap.
pub const MAX_CYCLE: usize = 16;
/// Slack on `|A| · cap ≥ 1`.
const FEASIBILITY_SLACK: f64 = 1e-12;

/// Smallest number of active columns for which the capped simplex is nonempty.
pub fn min_support(cap: f64) -> usize {
    libm::ceil(1.0 / cap - FEASIBILITY_SLACK) as usize
}

pub fn check_feasible(active: usize, cap: f64) -> Result<()> {
    if !(cap > 0.0) || (active as f64) * cap < 1.0 - FEASIBILITY_SLACK {
        return Err(Error::Infeasible { active, cap, needed: if cap > 0.0 { min_support(cap) } else { usize::MAX } });
    }
    Ok(())
}

/// Precomputed extremes of `⟨s, w⟩` over the capped simplex.
struct FitTable {
    low_weights: Vec<f64>,
    high_weights: Vec<f64>,
    low: f64,
    high: f64,
    mean: f64,
}

/// Water-filling: mass `cap` on entries in `order` until the unit mass is spent.
fn water_fill(order: &[usize], n: usize, cap: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let mut left = 1.0;
    for &j in order {
        if left <= 0.0 {
            break;
        }
        let put = cap.min(left);
        w[j] = put;
        left -= put;
    }
    w
}

impl FitTable {
    fn new(s: &[f64], cap: f64) -> Self {
        let n = s.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        let low_weights = water_fill(&order, n, cap);
        order.reverse();
        let high_weights = water_fill(&order, n, cap);
        let low = linalg::dot(s, &low_weights);
        let high = linalg::dot(s, &high_weights);
        let (s_min, s_max) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        // keep s_min ≤ low ≤ mean ≤ high ≤ s_max despite rounding
        let mean = (s.iter().sum::<f64>() / n as f64).clamp(s_min, s_max);
        let low = low.clamp(s_min, mean);
        let high = high.clamp(mean, s_max);
        Self { low_weights, high_weights, low, high, mean }
    }

    /// Weights attaining `clamp(t, low, high)`; inside the interval they
    /// interpolate between the uniform vector and the extreme on `t`'s side.
    fn fit(&self, t: f64) -> (Vec<f64>, f64) {
        let n = self.low_weights.len();
        let uniform = 1.0 / n as f64;
        if t <= self.low {
            return (self.low_weights.clone(), self.low);
        }
        if t >= self.high {
            return (self.high_weights.clone(), self.high);
        }
        let (extreme, end) =
            if t >= self.mean { (&self.high_weights, self.high) } else { (&self.low_weights, self.low) };
        let span = end - self.mean;
        let theta = if span != 0.0 { ((t - self.mean) / span).clamp(0.0, 1.0) } else { 0.0 };
        let w = extreme.iter().map(|e| (1.0 - theta) * uniform + theta * e).collect();
        (w, t)
    }
}

/// Minimizes `(t − ⟨s, w⟩)²` over `{w ≥ 0, Σ w = 1, w ≤ cap}`.
///
/// The reachable values of `⟨s, w⟩` form `[low, high]`, each endpoint obtained
/// by water-filling mass `cap` onto the smallest (largest) entries of `s`. The
/// fitted value is `t` clamped to that interval.
pub fn column_fit(s: &[f64], t: f64, cap: f64) -> Result<(Vec<f64>, f64)> {
    check_feasible(s.len(), cap)?;
    Ok(FitTable::new(s, cap).fit(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    /// `weights[i]` is the column `w_i` over the active set, in active order.
    pub weights: Vec<Vec<f64>>,
    /// Unit direction `v` with `Y = v vᵀ`.
    pub direction: Vec<f64>,
    /// Reconstruction errors `τ_i = (⟨v, g_i⟩ − ⟨v, G_A w_i⟩)²`, in active order.
    pub tau: Vec<f64>,
    /// `Φ = Σ c_i τ_i`.
    pub phi: f64,
    /// Successive `Φ` values agreed within [`ALTERNATION_TOL`].
    pub converged: bool,
    pub alternations: usize,
    /// `(λ_max(W) − Φ) / λ_max(W)` where `λ_max(W)` is the best response value
    /// of the maximizing player against the returned weights.
    pub certificate_gap: f64,
}

/// Top singular pair of the weighted residual matrix `[√c_i (g_i − G_A w_i)]`:
/// returns `σ²` and the unit left singular vector. The eigenproblem is solved
/// on whichever Gram side is smaller.
fn top_direction(cols: &DMatrix<f64>, weights: &[Vec<f64>], sqrt_c: &[f64]) -> (f64, Vec<f64>) {
    let (dim, n) = cols.shape();
    // residual map P = (I − W) diag(√c), so the residual matrix is G P
    let mut p = DMatrix::from_fn(n, n, |j, i| -weights[i][j] * sqrt_c[i]);
    for i in 0..n {
        p[(i, i)] += sqrt_c[i];
    }
    let res = cols * p;
    let (value, vector) = if n <= dim {
        let eig = (res.transpose() * &res).symmetric_eigen();
        let top = argmax(eig.eigenvalues.as_slice());
        (eig.eigenvalues[top], &res * eig.eigenvectors.column(top))
    } else {
        let eig = (&res * res.transpose()).symmetric_eigen();
        let top = argmax(eig.eigenvalues.as_slice());
        (eig.eigenvalues[top], eig.eigenvectors.column(top).into_owned())
    };
    let scale = vector.norm();
    if !(value > 0.0) || !(scale > 0.0) {
        return (0.0, linalg::default_start(dim));
    }
    (value, vector.iter().map(|x| x / scale).collect())
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

struct Candidate {
    weights: Vec<Vec<f64>>,
    direction: Vec<f64>,
    tau: Vec<f64>,
    phi: f64,
}

fn w_step(cols: &DMatrix<f64>, v: &[f64], c: &[f64], cap: f64) -> Candidate {
    let s: Vec<f64> = cols.column_iter().map(|g| linalg::dot(g.as_slice(), v)).collect();
    let table = FitTable::new(&s, cap);
    let mut weights = Vec::with_capacity(s.len());
    let mut tau = Vec::with_capacity(s.len());
    for &t in &s {
        let (w, fitted) = table.fit(t);
        weights.push(w);
        tau.push((t - fitted) * (t - fitted));
    }
    let phi = tau.iter().zip(c).map(|(t, ci)| t * ci).sum();
    Candidate { weights, direction: v.to_vec(), tau, phi }
}

/// Approximate saddle point over the active columns of `g`.
///
/// Starts from uniform weights and alternates the spectral `Y`-step and the
/// per-column `W`-step until `Φ` changes by less than [`ALTERNATION_TOL`]
/// (relative), a best-response cycle of length at most [`MAX_CYCLE`] closes
/// (flagged as not converged), or [`MAX_ALTERNATIONS`] is reached. The iterate with the largest
/// `Φ` (the maximizing player's best guaranteed value) is returned.
pub fn solve_saddle(g: &GradientMatrix, active: &[usize], c: &[f64], cap: f64) -> Result<SaddleSolution> {
    let n = active.len();
    if c.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    check_feasible(n, cap)?;
    let dim = g.dim();
    let cols = DMatrix::from_fn(dim, n, |r, j| g.column(active[j])[r]);
    let sqrt_c: Vec<f64> = c.iter().map(|ci| libm::sqrt(ci.max(0.0))).collect();

    let mut weights = vec![vec![1.0 / n as f64; n]; n];
    let mut best: Option<Candidate> = None;
    let mut history: Vec<f64> = Vec::with_capacity(MAX_ALTERNATIONS);
    let mut converged = false;
    let mut alternations = 0;
    for _ in 0..MAX_ALTERNATIONS {
        alternations += 1;
        let (lambda, v) = top_direction(&cols, &weights, &sqrt_c);
        let cand = if lambda == 0.0 {
            // residuals vanish: exact reconstruction, Φ = 0 for every Y
            Candidate { weights: weights.clone(), direction: v, tau: vec![0.0; n], phi: 0.0 }
        } else {
            w_step(&cols, &v, c, cap)
        };
        let phi = cand.phi;
        let stop_now = lambda == 0.0;
        weights = cand.weights.clone();
        if best.as_ref().is_none_or(|b| phi > b.phi) {
            best = Some(cand);
        }
        if stop_now {
            converged = true;
            break;
        }
        let close = |p: f64| libm::fabs(phi - p) <= ALTERNATION_TOL * phi.max(p);
        if history.last().is_some_and(|&p| close(p)) {
            converged = true;
            break;
        }
        // a repeating cycle revisits the same iterates, so the best one is already kept
        if (2..=MAX_CYCLE).any(|p| history.len() >= p && close(history[history.len() - p])) {
            break;
        }
        history.push(phi);
    }
    let best = best.expect("at least one alternation");
    let (lambda_cert, _) = top_direction(&cols, &best.weights, &sqrt_c);
    let certificate_gap = if lambda_cert > 0.0 { ((lambda_cert - best.phi) / lambda_cert).max(0.0) } else { 0.0 };
    Ok(SaddleSolution {
        weights: best.weights,
        direction: best.direction,
        tau: best.tau,
        phi: best.phi,
        converged,
        alternations,
        certificate_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_single_column() {
        let (w, f) = column_fit(&[2.5], -1.0, 1.0).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(f, 2.5);
    }

    #[test]
    fn fit_inside_interval() {
        let (w, f) = column_fit(&[1.0, 3.0], 2.0, 0.8).unwrap();
        assert_eq!(f, 2.0);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fit_clamps_to_low_end() {
        let (w, f) = column_fit(&[1.0, 3.0], 0.0, 0.8).unwrap();
        assert!((f - 1.4).abs() < 1e-15);
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
        assert!(((0.0 - f) * (0.0 - f) - 1.96).abs() < 1e-12);
    }

    #[test]
    fn infeasible_cap() {
        assert!(matches!(column_fit(&[1.0, 2.0], 0.0, 0.4), Err(Error::Infeasible { needed: 3, .. })));
    }

    #[test]
    fn single_active_column() {
        let g = GradientMatrix::from_columns(&[vec![1.0, 2.0], vec![5.0, 5.0]]).unwrap();
        let sol = solve_saddle(&g, &[1], &[1.0], 1.0).unwrap();
        assert_eq!(sol.weights, vec![vec![1.0]]);
        assert_eq!(sol.phi, 0.0);
        assert_eq!(sol.tau, vec![0.0]);
    }

    #[test]
    fn identical_columns_reconstruct() {
        let g = GradientMatrix::from_columns(&[vec![1.0, -2.0, 0.5], vec![1.0, -2.0, 0.5]]).unwrap();
        let sol = solve_saddle(&g, &[0, 1], &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(sol.phi, 0.0);
    }
}
