//! Heterogeneous linear-regression federations and planted gradient sets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LocalDataset, ParameterPoint};

/// Parameters of the per-worker linear model `y = ⟨w, x*_r⟩ + noise`,
/// `w ~ N(0, feature_cov)`, `x*_r = base_param + δ_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroModelSpec {
    pub dim: usize,
    pub workers: usize,
    pub samples_per_worker: usize,
    /// Row-major `dim × dim`; identity when absent.
    #[serde(default)]
    pub feature_cov: Option<Vec<f64>>,
    pub noise_std: f64,
    pub shift_radius: f64,
    /// All-zero when absent.
    #[serde(default)]
    pub base_param: Option<Vec<f64>>,
    /// Copy worker 0's dataset to every worker (zero dissimilarity).
    #[serde(default)]
    pub identical_workers: bool,
}

impl HeteroModelSpec {
    pub fn isotropic(dim: usize, workers: usize, samples_per_worker: usize, noise_std: f64, shift_radius: f64) -> Self {
        Self {
            dim,
            workers,
            samples_per_worker,
            feature_cov: None,
            noise_std,
            shift_radius,
            base_param: None,
            identical_workers: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.workers == 0 || self.samples_per_worker == 0 {
            return Err(Error::InvalidParameter("dim, workers and samples_per_worker must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.shift_radius >= 0.0) {
            return Err(Error::InvalidParameter("noise_std and shift_radius must be nonnegative".into()));
        }
        if let Some(cov) = &self.feature_cov {
            if cov.len() != self.dim * self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim * self.dim, got: cov.len() });
            }
        }
        if let Some(base) = &self.base_param {
            if base.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: base.len() });
            }
        }
        Ok(())
    }

    fn base(&self) -> Vec<f64> {
        self.base_param.clone().unwrap_or_else(|| vec![0.0; self.dim])
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.feature_cov {
            Some(c) => DMatrix::from_row_slice(self.dim, self.dim, c),
            None => DMatrix::identity(self.dim, self.dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroData {
    pub worlds: Vec<LocalDataset>,
    /// Per-worker generating parameters `x*_r`.
    pub truth: Vec<ParameterPoint>,
    /// Per-worker shifts `δ_r`.
    pub shifts: Vec<Vec<f64>>,
}

/// Unit directions for the worker shifts: `+e_1, −e_1, +e_2, −e_2, …`,
/// cycling after `2d` workers. Antipodal pairs keep the mean shift at zero
/// whenever `R` is even and `R ≤ 2d`.
pub fn shift_directions(dim: usize, workers: usize) -> Vec<Vec<f64>> {
    (0..workers)
        .map(|r| {
            let slot = r % (2 * dim);
            let mut e = vec![0.0; dim];
            e[slot / 2] = if slot.is_multiple_of(2) { 1.0 } else { -1.0 };
            e
        })
        .collect()
}

/// Factor `A` with `A Aᵀ = cov`, via the symmetric eigendecomposition.
fn psd_factor(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    if (0..dim)
        .any(|i| (0..dim).any(|j| libm::fabs(cov[(i, j)] - cov[(j, i)]) > 1e-12 * (1.0 + libm::fabs(cov[(i, j)]))))
    {
        return Err(Error::InvalidParameter("feature covariance is not symmetric".into()));
    }
    let eig = cov.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min < -1e-10 * max.max(1.0) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = libm::sqrt(lam.max(0.0));
        for i in 0..dim {
            factor[(i, j)] *= s;
        }
    }
    Ok(factor)
}

/// Draws the federation. Per worker, per sample: `dim` standard normals for
/// the feature, then one for the noise. Deterministic given `rng`.
pub fn generate<R: Rng + ?Sized>(rng: &mut R, spec: &HeteroModelSpec) -> Result<HeteroData> {
    spec.validate()?;
    let d = spec.dim;
    let factor = match &spec.feature_cov {
        Some(_) => Some(psd_factor(spec.cov_matrix())?),
        None => None,
    };
    let base = spec.base();
    let shifts: Vec<Vec<f64>> = shift_directions(d, spec.workers)
        .into_iter()
        .map(|mut u| {
            linalg::scale(spec.shift_radius, &mut u);
            u
        })
        .collect();
    let truth: Vec<ParameterPoint> =
        shifts.iter().map(|s| ParameterPoint(base.iter().zip(s).map(|(b, s)| b + s).collect())).collect();

    let n = spec.samples_per_worker;
    let mut worlds: Vec<LocalDataset> = Vec::with_capacity(spec.workers);
    let mut z = vec![0.0; d];
    for (r, truth_r) in truth.iter().enumerate() {
        if spec.identical_workers && r > 0 {
            worlds.push(worlds[0].clone());
            continue;
        }
        let mut features = Vec::with_capacity(n * d);
        let mut responses = Vec::with_capacity(n);
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            let w: Vec<f64> = match &factor {
                Some(f) => (0..d).map(|i| (0..d).map(|j| f[(i, j)] * z[j]).sum()).collect(),
                None => z.clone(),
            };
            let eps: f64 = StandardNormal.sample(rng);
            responses.push(linalg::dot(&w, truth_r) + spec.noise_std * eps);
            features.extend_from_slice(&w);
        }
        worlds.push(LocalDataset::new(d, features, responses)?);
    }
    if spec.identical_workers {
        // every worker shares worker 0's generating parameter
        let t0 = truth[0].clone();
        let s0 = shifts[0].clone();
        return Ok(HeteroData { worlds, truth: vec![t0; spec.workers], shifts: vec![s0; spec.workers] });
    }
    Ok(HeteroData { worlds, truth, shifts })
}

/// Population-mean dissimilarity `max_r ‖Σ (δ̄ − δ_r)‖`, constant in `x` for
/// the linear model.
pub fn kappa_mean_theoretical(spec: &HeteroModelSpec, shifts: &[Vec<f64>]) -> Result<f64> {
    if shifts.is_empty() {
        return Ok(0.0);
    }
    let d = spec.dim;
    if let Some(bad) = shifts.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let cov = spec.cov_matrix();
    let mean = linalg::mean(shifts.iter().map(|s| s.as_slice()));
    let mut best: f64 = 0.0;
    for s in shifts {
        let diff: Vec<f64> = mean.iter().zip(s).map(|(m, v)| m - v).collect();
        let mapped: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[(i, j)] * diff[j]).sum()).collect();
        best = best.max(linalg::norm(&mapped));
    }
    Ok(best)
}

/// How planted outliers are placed relative to the inliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedOutliers {
    /// All outliers at one point `distance` away from the inlier sample mean.
    Shift,
    /// Outlier `j` is the negation of inlier `j`; the inlier center has norm
    /// `distance / 2` so the two clusters are `distance` apart.
    SignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub columns: Vec<Vec<f64>>,
    /// Indices of the inlier columns.
    pub inliers: Vec<usize>,
    pub inlier_mean: Vec<f64>,
}

/// `m` columns in `R^dim`: `m − ⌊ε̃ m⌋` inliers `center + σ₀ N(0, I)` followed
/// by the outliers. The inlier center is `(distance/2) e_1` for sign flips and
/// zero otherwise.
pub fn planted_gradients<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    dim: usize,
    sigma0: f64,
    eps_tilde: f64,
    outliers: PlantedOutliers,
    distance: f64,
) -> Result<PlantedInstance> {
    if m == 0 || dim == 0 || !(0.0..0.5).contains(&eps_tilde) {
        return Err(Error::InvalidParameter(format!("bad planted instance (m={m}, dim={dim}, eps={eps_tilde})")));
    }
    let bad = crate::attacks::corrupt_count(eps_tilde, m);
    let good = m - bad;
    let mut center = vec![0.0; dim];
    if outliers == PlantedOutliers::SignFlip {
        center[0] = distance / 2.0;
    }
    let mut columns: Vec<Vec<f64>> = (0..good)
        .map(|_| {
            center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(rng);
                    c + sigma0 * z
                })
                .collect()
        })
        .collect();
    let inlier_mean = linalg::mean(columns.iter().map(|c| c.as_slice()));
    match outliers {
        PlantedOutliers::Shift => {
            let dir = linalg::normalized(&inlier_mean).unwrap_or_else(|| {
                let mut e = vec![0.0; dim];
                e[0] = 1.0;
                e
            });
            let point: Vec<f64> = inlier_mean.iter().zip(&dir).map(|(m, u)| m - distance * u).collect();
            columns.extend((0..bad).map(|_| point.clone()));
        }
        PlantedOutliers::SignFlip => {
            for j in 0..bad {
                let flipped: Vec<f64> = columns[j % good].iter().map(|v| -v).collect();
                columns.push(flipped);
            }
        }
    }
    Ok(PlantedInstance { columns, inliers: (0..good).collect(), inlier_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{stream, StreamTag};

    #[test]
    fn zero_radius_is_homogeneous() {
        let spec = HeteroModelSpec::isotropic(3, 4, 10, 0.1, 0.0);
        let data = generate(&mut stream(1, StreamTag::Data, 0, 0), &spec).unwrap();
        assert!(data.truth.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(kappa_mean_theoretical(&spec, &data.shifts).unwrap(), 0.0);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = HeteroModelSpec::isotropic(3, 4, 10, 0.1, 1.0);
        let a = generate(&mut stream(9, StreamTag::Data, 0, 0), &spec).unwrap();
        let b = generate(&mut stream(9, StreamTag::Data, 0, 0), &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn antipodal_pair_kappa_mean() {
        let spec = HeteroModelSpec::isotropic(2, 2, 5, 0.0, 1.0);
        let shifts = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(shift_directions(2, 2), shifts);
        assert!((kappa_mean_theoretical(&spec, &shifts).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let mut spec = HeteroModelSpec::isotropic(2, 2, 5, 0.0, 1.0);
        spec.feature_cov = Some(vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(generate(&mut stream(1, StreamTag::Data, 0, 0), &spec), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn identical_workers_share_data() {
        let mut spec = HeteroModelSpec::isotropic(3, 5, 8, 0.3, 1.0);
        spec.identical_workers = true;
        let data = generate(&mut stream(2, StreamTag::Data, 0, 0), &spec).unwrap();
        assert!(data.worlds.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(kappa_mean_theoretical(&spec, &data.shifts).unwrap(), 0.0);
    }

    #[test]
    fn planted_shift_geometry() {
        let inst =
            planted_gradients(&mut stream(3, StreamTag::Data, 0, 0), 50, 20, 1.0, 0.2, PlantedOutliers::Shift, 50.0)
                .unwrap();
        assert_eq!(inst.inliers.len(), 40);
        for c in &inst.columns[40..] {
            assert!((linalg::dist(c, &inst.inlier_mean) - 50.0).abs() < 1e-9);
        }
    }
}
