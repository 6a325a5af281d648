//! Spectral spread of a point cloud around a center.

use alloc::vec::Vec;

use crate::linalg::{self, PowerParams, SymOperator};

/// `v ↦ (1/n) Σ (p − c) ⟨p − c, v⟩` without forming the `d × d` matrix.
struct Deviation {
    dim: usize,
    centered: Vec<Vec<f64>>,
}

impl SymOperator for Deviation {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let inv = 1.0 / self.centered.len() as f64;
        for p in &self.centered {
            linalg::axpy(inv * linalg::dot(p, v), p, out);
        }
    }
}

/// Diagnostics run to much tighter tolerance than the filter's inner loop.
const DIAGNOSTIC_POWER: PowerParams = PowerParams { max_iter: 20_000, tol: 1e-15 };

/// `λ_max((1/n) Σ (p − c)(p − c)ᵀ)`. Returns 0 for an empty set.
pub fn max_eig_deviation<P: AsRef<[f64]>>(points: &[P], center: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let centered: Vec<Vec<f64>> = points.iter().map(|p| linalg::sub(p.as_ref(), center)).collect();
    // Start from the most spread point so the iterate is never orthogonal to
    // the top eigenspace by construction.
    let start =
        centered.iter().max_by(|a, b| linalg::norm_sq(a).total_cmp(&linalg::norm_sq(b))).cloned().unwrap_or_default();
    let op = Deviation { dim: center.len(), centered };
    linalg::power_iteration(&op, Some(&start), DIAGNOSTIC_POWER).value.max(0.0)
}

/// Spread of honest full-batch gradients around their mean against `4κ²`.
pub fn full_batch_concentration_check<P: AsRef<[f64]>>(honest: &[P], kappa: f64) -> (f64, bool) {
    if honest.is_empty() {
        return (0.0, true);
    }
    let center = linalg::mean(honest.iter().map(|p| p.as_ref()));
    let lambda = max_eig_deviation(honest, &center);
    (lambda, lambda <= 4.0 * kappa * kappa + 1e-9)
}
