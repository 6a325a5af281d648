//! Objectives, gradient oracles and empirical problem constants.
//!
//! Each worker `r` holds a [`LocalDataset`] of `n_r` samples `(w, y)`. The
//! per-sample loss is the squared residual `½(⟨w, x⟩ − y)²`; the nonconvex
//! objective adds the smooth bounded-curvature penalty `λ Σ_j x_j²/(1 + x_j²)`
//! to every per-sample loss (and therefore to the global loss).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PowerParams, Shifted, SymOperator};

/// A model vector `x ∈ R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint(pub Vec<f64>);

impl ParameterPoint {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParameterPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParameterPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Euclidean ball `{x : ‖x − center‖ ≤ radius}`; `radius = None` is all of `R^d`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub radius: Option<f64>,
    /// All-zero when absent.
    pub center: Option<Vec<f64>>,
}

impl DomainSpec {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn ball(radius: f64) -> Self {
        Self { radius: Some(radius), center: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self.radius {
            Some(r) if !(r > 0.0) || r.is_nan() => {
                Err(Error::InvalidParameter(format!("domain radius must be positive, got {r}")))
            }
            _ => Ok(()),
        }
    }

    pub fn center_vec(&self, dim: usize) -> Vec<f64> {
        self.center.clone().unwrap_or_else(|| vec![0.0; dim])
    }
}

/// The local data `D_r` of one worker. Features are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    dim: usize,
    features: Vec<f64>,
    responses: Vec<f64>,
}

impl LocalDataset {
    pub fn new(dim: usize, features: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.len() != dim * responses.len() {
            return Err(Error::DimensionMismatch { expected: dim * responses.len(), got: features.len() });
        }
        if !features.iter().chain(&responses).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sample".into()));
        }
        Ok(Self { dim, features, responses })
    }

    pub fn from_rows(rows: &[(Vec<f64>, f64)]) -> Result<Self> {
        let dim = rows.first().map(|r| r.0.len()).ok_or(Error::EmptyDataset)?;
        let mut features = Vec::with_capacity(dim * rows.len());
        let mut responses = Vec::with_capacity(rows.len());
        for (w, y) in rows {
            if w.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: w.len() });
            }
            features.extend_from_slice(w);
            responses.push(*y);
        }
        Self::new(dim, features, responses)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn response(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn samples(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.responses.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    StronglyConvexQuadratic,
    SmoothNonconvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Weight of the nonconvex penalty; ignored for the quadratic kind.
    #[serde(default)]
    pub reg_weight: f64,
}

impl ObjectiveSpec {
    pub const fn quadratic() -> Self {
        Self { kind: ObjectiveKind::StronglyConvexQuadratic, reg_weight: 0.0 }
    }

    pub const fn nonconvex(reg_weight: f64) -> Self {
        Self { kind: ObjectiveKind::SmoothNonconvex, reg_weight }
    }

    fn penalty_weight(&self) -> f64 {
        match self.kind {
            ObjectiveKind::StronglyConvexQuadratic => 0.0,
            ObjectiveKind::SmoothNonconvex => self.reg_weight,
        }
    }

    /// Per-coordinate Hessian of the penalty lies in `[-λ/2, 2λ]`.
    pub fn penalty_curvature_bound(&self) -> f64 {
        2.0 * self.penalty_weight()
    }
}

fn penalty(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v / (1.0 + v * v)).sum()
}

fn add_penalty_gradient(weight: f64, x: &[f64], out: &mut [f64]) {
    if weight == 0.0 {
        return;
    }
    for (o, v) in out.iter_mut().zip(x) {
        let q = 1.0 + v * v;
        *o += weight * 2.0 * v / (q * q);
    }
}

fn check_dim(ds: &LocalDataset, x: &[f64]) -> Result<()> {
    if ds.dim() != x.len() {
        return Err(Error::DimensionMismatch { expected: ds.dim(), got: x.len() });
    }
    Ok(())
}

/// Loss of sample `i`, `F_{r,i}(x)`.
pub fn sample_loss(spec: &ObjectiveSpec, ds: &LocalDataset, i: usize, x: &[f64]) -> Result<f64> {
    if i >= ds.len() {
        return Err(Error::IndexOutOfRange { index: i, len: ds.len() });
    }
    check_dim(ds, x)?;
    let res = linalg::dot(ds.feature(i), x) - ds.response(i);
    Ok(0.5 * res * res + spec.penalty_weight() * penalty(x))
}

/// `F_r(x)`, the mean sample loss.
pub fn local_loss(spec: &ObjectiveSpec, ds: &LocalDataset, x: &[f64]) -> Result<f64> {
    check_dim(ds, x)?;
    let sq: f64 = ds
        .samples()
        .map(|(w, y)| {
            let r = linalg::dot(w, x) - y;
            0.5 * r * r
        })
        .sum();
    Ok(sq / ds.len() as f64 + spec.penalty_weight() * penalty(x))
}

/// `F(x) = (1/R) Σ_r F_r(x)`.
pub fn global_loss(spec: &ObjectiveSpec, worlds: &[LocalDataset], x: &[f64]) -> Result<f64> {
    if worlds.is_empty() {
        return Err(Error::NoWorkers);
    }
    let mut total = 0.0;
    for ds in worlds {
        total += local_loss(spec, ds, x)?;
    }
    Ok(total / worlds.len() as f64)
}

fn accumulate_residual_gradient(ds: &LocalDataset, i: usize, x: &[f64], weight: f64, out: &mut [f64]) {
    let w = ds.feature(i);
    let res = linalg::dot(w, x) - ds.response(i);
    linalg::axpy(weight * res, w, out);
}

/// `∇F_{r,i}(x)`.
pub fn per_sample_gradient(spec: &ObjectiveSpec, ds: &LocalDataset, i: usize, x: &[f64]) -> Result<Vec<f64>> {
    if i >= ds.len() {
        return Err(Error::IndexOutOfRange { index: i, len: ds.len() });
    }
    check_dim(ds, x)?;
    let mut g = vec![0.0; x.len()];
    accumulate_residual_gradient(ds, i, x, 1.0, &mut g);
    add_penalty_gradient(spec.penalty_weight(), x, &mut g);
    Ok(g)
}

fn mean_gradient_over(spec: &ObjectiveSpec, ds: &LocalDataset, idx: &[usize], x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let inv = 1.0 / idx.len() as f64;
    for &i in idx {
        accumulate_residual_gradient(ds, i, x, 1.0, &mut g);
    }
    linalg::scale(inv, &mut g);
    add_penalty_gradient(spec.penalty_weight(), x, &mut g);
    g
}

/// `∇F_r(x)`, the mean of the per-sample gradients.
pub fn local_full_gradient(spec: &ObjectiveSpec, ds: &LocalDataset, x: &[f64]) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(ds, x)?;
    let mut g = vec![0.0; x.len()];
    for (w, y) in ds.samples() {
        linalg::axpy(linalg::dot(w, x) - y, w, &mut g);
    }
    linalg::scale(1.0 / ds.len() as f64, &mut g);
    add_penalty_gradient(spec.penalty_weight(), x, &mut g);
    Ok(g)
}

/// `∇F(x) = (1/R) Σ_r ∇F_r(x)`.
pub fn global_gradient(spec: &ObjectiveSpec, worlds: &[LocalDataset], x: &[f64]) -> Result<Vec<f64>> {
    if worlds.is_empty() {
        return Err(Error::NoWorkers);
    }
    let mut g = vec![0.0; x.len()];
    for ds in worlds {
        linalg::axpy(1.0, &local_full_gradient(spec, ds, x)?, &mut g);
    }
    linalg::scale(1.0 / worlds.len() as f64, &mut g);
    Ok(g)
}

/// Draws `b` distinct indices from `0..n` by a partial Fisher–Yates shuffle.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, b: usize) -> Result<Vec<usize>> {
    if b < 1 || b > n {
        return Err(Error::BatchSize { batch: b, available: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let (chosen, _) = idx.partial_shuffle(rng, b);
    Ok(chosen.to_vec())
}

/// Mean of the per-sample gradients on a uniformly drawn size-`b` subset.
pub fn minibatch_gradient<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ObjectiveSpec,
    ds: &LocalDataset,
    b: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_dim(ds, x)?;
    let idx = sample_batch(rng, ds.len(), b)?;
    Ok(mean_gradient_over(spec, ds, &idx, x))
}

/// Mini-batch gradient on an explicit index subset (used for enumeration).
pub fn subset_gradient(spec: &ObjectiveSpec, ds: &LocalDataset, idx: &[usize], x: &[f64]) -> Result<Vec<f64>> {
    check_dim(ds, x)?;
    if idx.is_empty() {
        return Err(Error::BatchSize { batch: 0, available: ds.len() });
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::IndexOutOfRange { index: bad, len: ds.len() });
    }
    Ok(mean_gradient_over(spec, ds, idx, x))
}

/// Euclidean projection onto the domain ball.
pub fn project(x: &[f64], dom: &DomainSpec) -> ParameterPoint {
    let Some(radius) = dom.radius else {
        return ParameterPoint(x.to_vec());
    };
    let center = dom.center_vec(x.len());
    let d = linalg::dist(x, &center);
    if d <= radius {
        return ParameterPoint(x.to_vec());
    }
    let t = radius / d;
    ParameterPoint(center.iter().zip(x).map(|(c, v)| c + t * (v - c)).collect())
}

/// Samples uniformly from the ball of `radius` around `center`.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let dim = center.len();
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let dir = linalg::normalized(&dir).unwrap_or_else(|| {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        e
    });
    let u: f64 = rng.random();
    let r = radius * libm::pow(u, 1.0 / dim as f64);
    center.iter().zip(&dir).map(|(c, v)| c + r * v).collect()
}

/// The averaged data Hessian `(1/R) Σ_r (1/n_r) Σ_i w_i w_iᵀ` as an operator.
pub struct DataHessian<'a> {
    worlds: &'a [LocalDataset],
    dim: usize,
}

impl<'a> DataHessian<'a> {
    pub fn new(worlds: &'a [LocalDataset]) -> Result<Self> {
        let dim = worlds.first().ok_or(Error::NoWorkers)?.dim();
        if let Some(bad) = worlds.iter().find(|w| w.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        Ok(Self { worlds, dim })
    }
}

impl SymOperator for DataHessian<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let inv_r = 1.0 / self.worlds.len() as f64;
        for ds in self.worlds {
            let wgt = inv_r / ds.len() as f64;
            for (w, _) in ds.samples() {
                linalg::axpy(wgt * linalg::dot(w, v), w, out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    /// Smoothness constant `L`.
    pub lipschitz: f64,
    /// Strong-convexity constant `μ` (0 for the nonconvex kind or degenerate data).
    pub strong_convexity: f64,
    /// The data Hessian is (numerically) singular.
    pub degenerate: bool,
}

/// Relative size below which the smallest Hessian eigenvalue counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// `L` and `μ` of the global objective by power iteration.
///
/// `μ` comes from power iteration on `L·I − H`; the resulting eigenvector is
/// then re-evaluated as a Rayleigh quotient of `H` to avoid cancellation.
pub fn curvature_constants(spec: &ObjectiveSpec, worlds: &[LocalDataset]) -> Result<Curvature> {
    let hess = DataHessian::new(worlds)?;
    let params = PowerParams::default();
    let top = linalg::power_iteration(&hess, None, params);
    let l_data = top.value;
    let (mu, degenerate) = if l_data <= 0.0 {
        (0.0, true)
    } else {
        let shifted = Shifted { inner: &hess, shift: l_data };
        let bottom = linalg::power_iteration(&shifted, None, params);
        let mut hv = vec![0.0; hess.dim()];
        hess.apply(&bottom.vector, &mut hv);
        let mu = linalg::dot(&bottom.vector, &hv).min(l_data - bottom.value).max(0.0);
        if mu <= DEGENERACY_TOL * l_data {
            (0.0, true)
        } else {
            (mu, false)
        }
    };
    Ok(match spec.kind {
        ObjectiveKind::StronglyConvexQuadratic => Curvature { lipschitz: l_data, strong_convexity: mu, degenerate },
        ObjectiveKind::SmoothNonconvex => {
            Curvature { lipschitz: l_data + spec.penalty_curvature_bound(), strong_convexity: 0.0, degenerate }
        }
    })
}

fn normal_equations(worlds: &[LocalDataset]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let dim = worlds.first().ok_or(Error::NoWorkers)?.dim();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let inv_r = 1.0 / worlds.len() as f64;
    for ds in worlds {
        if ds.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: ds.dim() });
        }
        let wgt = inv_r / ds.len() as f64;
        for (w, y) in ds.samples() {
            for a in 0..dim {
                rhs[a] += wgt * y * w[a];
                for b in 0..dim {
                    h[(a, b)] += wgt * w[a] * w[b];
                }
            }
        }
    }
    Ok((h, rhs))
}

/// Minimizer of the quadratic part of `F` (the normal-equations solution).
pub fn quadratic_optimum(worlds: &[LocalDataset]) -> Result<ParameterPoint> {
    let (h, rhs) = normal_equations(worlds)?;
    let singular = || Error::Degenerate("data Hessian is singular; optimum not unique".into());
    let scale = h.diagonal().max();
    let chol = h.cholesky().ok_or_else(singular)?;
    let pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &v| a.min(v * v));
    if !(scale > 0.0) || pivot <= DEGENERACY_TOL * scale {
        return Err(singular());
    }
    Ok(ParameterPoint(chol.solve(&rhs).iter().copied().collect()))
}

/// Largest second moment `(1/n_r) Σ_i ‖∇F_{r,i}(x)‖²` over workers and probes.
pub fn measure_second_moment(spec: &ObjectiveSpec, worlds: &[LocalDataset], probes: &[ParameterPoint]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for x in probes {
        for ds in worlds {
            let mut acc = 0.0;
            for i in 0..ds.len() {
                acc += linalg::norm_sq(&per_sample_gradient(spec, ds, i, x)?);
            }
            best = best.max(acc / ds.len() as f64);
        }
    }
    Ok(best)
}

/// Empirical dissimilarity `max_{r, x ∈ probes} ‖∇F_r(x) − ∇F(x)‖`.
pub fn measure_kappa(spec: &ObjectiveSpec, worlds: &[LocalDataset], probes: &[ParameterPoint]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("no probe points".into()));
    }
    let mut best: f64 = 0.0;
    for x in probes {
        let g = global_gradient(spec, worlds, x)?;
        for ds in worlds {
            best = best.max(linalg::dist(&local_full_gradient(spec, ds, x)?, &g));
        }
    }
    Ok(best)
}

/// Upper bound on `sup_{x ∈ C} max_r ‖∇F_r(x) − ∇F(x)‖` for the data model.
///
/// The difference is affine, `A_r x − e_r` with `A_r = H_r − H` and
/// `e_r = b_r − b`, so on the ball `‖x − c‖ ≤ ρ` it is bounded by
/// `‖A_r c − e_r‖ + ρ ‖A_r‖₂`, with the spectral norm from power iteration on
/// `A_r²`. The penalty term is common to all workers and cancels. Returns
/// infinity for an unbounded domain unless every `A_r` vanishes.
pub fn kappa_ball_bound(worlds: &[LocalDataset], dom: &DomainSpec) -> Result<f64> {
    let (h, b) = normal_equations(worlds)?;
    let dim = h.nrows();
    let center = DVector::from_vec(dom.center_vec(dim));
    let mut best: f64 = 0.0;
    for ds in worlds {
        let (hr, br) = normal_equations(core::slice::from_ref(ds))?;
        let a = hr - &h;
        let e = br - &b;
        let offset = (&a * &center - e).norm();
        let sq = a.transpose() * &a;
        let data: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| sq[(i, j)]).collect();
        let op = linalg::DenseSym { dim, data: &data };
        let spec_norm = libm::sqrt(linalg::power_iteration(&op, None, PowerParams::default()).value.max(0.0));
        let bound = match dom.radius {
            Some(rad) => offset + rad * spec_norm,
            None if spec_norm <= 1e-14 * (1.0 + h.norm()) => offset,
            None => f64::INFINITY,
        };
        best = best.max(bound);
    }
    Ok(best)
}

/// `max_{r, x ∈ probes} sqrt((1/n_r) Σ_i ‖∇F_{r,i}(x) − ∇F_r(x)‖²)`.
pub fn measure_sigma(spec: &ObjectiveSpec, worlds: &[LocalDataset], probes: &[ParameterPoint]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("no probe points".into()));
    }
    let mut best: f64 = 0.0;
    for x in probes {
        for ds in worlds {
            let mean = local_full_gradient(spec, ds, x)?;
            let mut acc = 0.0;
            for i in 0..ds.len() {
                acc += linalg::dist_sq(&per_sample_gradient(spec, ds, i, x)?, &mean);
            }
            best = best.max(libm::sqrt(acc / ds.len() as f64));
        }
    }
    Ok(best)
}

/// Number of random probes drawn in addition to the origin and the optimum.
pub const RANDOM_PROBES: usize = 16;

/// Probe set for the sup-over-domain constants: the origin, `optimum` (when
/// known) and [`RANDOM_PROBES`] uniform points in the domain. An unbounded
/// domain is replaced by the ball of radius `max(1, 2‖optimum‖)` around its
/// center.
pub fn probe_points<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    dom: &DomainSpec,
    optimum: Option<&ParameterPoint>,
) -> Vec<ParameterPoint> {
    let center = dom.center_vec(dim);
    let radius = dom.radius.unwrap_or_else(|| {
        let scale = optimum.map(|o| 2.0 * linalg::dist(o, &center)).unwrap_or(0.0);
        scale.max(1.0)
    });
    let mut probes = vec![ParameterPoint::zeros(dim)];
    if let Some(o) = optimum {
        probes.push(o.clone());
    }
    for _ in 0..RANDOM_PROBES {
        probes.push(ParameterPoint(uniform_in_ball(rng, &center, radius)));
    }
    probes
}
