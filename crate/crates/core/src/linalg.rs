//! Dense vector helpers and a matrix-free symmetric power iteration.

use alloc::vec;
use alloc::vec::Vec;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(norm_sq(a))
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(dist_sq(a, b))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Arithmetic mean of equally sized vectors. Panics on an empty iterator.
pub fn mean<'a, I>(vectors: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().expect("mean of zero vectors");
    let mut acc = first.to_vec();
    let mut count = 1usize;
    for v in iter {
        axpy(1.0, v, &mut acc);
        count += 1;
    }
    scale(1.0 / count as f64, &mut acc);
    acc
}

/// Returns `v / ‖v‖`, or `None` when `v` is zero.
pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        Some(v.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

/// A symmetric positive semidefinite operator known only through its action.
pub trait SymOperator {
    fn dim(&self) -> usize;
    /// Writes `A v` into `out` (which has length `dim()`).
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

/// Dense row-major symmetric matrix as an operator.
pub struct DenseSym<'a> {
    pub dim: usize,
    pub data: &'a [f64],
}

impl SymOperator for DenseSym<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * self.dim..(i + 1) * self.dim], v);
        }
    }
}

/// `shift * I - A`, used to reach the bottom of the spectrum of `A`.
pub struct Shifted<'a, A: SymOperator> {
    pub inner: &'a A,
    pub shift: f64,
}

impl<A: SymOperator> SymOperator for Shifted<'_, A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.inner.apply(v, out);
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.shift * vi - *o;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerParams {
    pub max_iter: usize,
    /// Relative change of the Rayleigh quotient below which iteration stops.
    pub tol: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Deterministic start vector with no special alignment to coordinate axes.
pub fn default_start(dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|j| 1.0 + 0.5 * libm::sin(1.0 + j as f64 * 2.399_963_229_728_653)).collect();
    let n = norm(&v);
    scale(1.0 / n, &mut v);
    v
}

/// Top eigenpair of a symmetric PSD operator by power iteration.
///
/// The returned value is the Rayleigh quotient of the final unit vector. A zero
/// operator yields value 0 and the (normalized) start vector.
pub fn power_iteration<A: SymOperator>(op: &A, start: Option<&[f64]>, params: PowerParams) -> Eigenpair {
    let dim = op.dim();
    let mut v = match start.and_then(normalized) {
        Some(s) if s.len() == dim => s,
        _ => default_start(dim),
    };
    let mut av = vec![0.0; dim];
    op.apply(&v, &mut av);
    let mut lambda = dot(&v, &av);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..params.max_iter {
        iterations = it + 1;
        let Some(next) = normalized(&av) else {
            // A v = 0: v lies in the kernel. For PSD operators with v a
            // generic start this means the operator is zero.
            lambda = 0.0;
            converged = true;
            break;
        };
        v = next;
        op.apply(&v, &mut av);
        let new_lambda = dot(&v, &av);
        let change = libm::fabs(new_lambda - lambda);
        lambda = new_lambda;
        if change <= params.tol * libm::fabs(lambda) || lambda == 0.0 {
            converged = true;
            break;
        }
    }
    Eigenpair { value: lambda, vector: v, iterations, converged }
}
