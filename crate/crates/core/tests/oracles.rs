//! Checks against independent reference computations: finite differences,
//! dense eigendecompositions, least squares, grid search and enumeration.

use byzsgd_core::compression::{self, CoordinateSet};
use byzsgd_core::datagen::{self, HeteroModelSpec};
use byzsgd_core::linalg;
use byzsgd_core::model::{self, LocalDataset, ObjectiveSpec};
use byzsgd_core::rge::{self, saddle, GradientMatrix};
use byzsgd_core::seed::{stream, StreamTag};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_dataset(seed: u64, n: usize, dim: usize) -> LocalDataset {
    let mut rng = stream(seed, StreamTag::Data, 99, 0);
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: f64 = StandardNormal.sample(&mut rng);
            (w, y)
        })
        .collect();
    LocalDataset::from_rows(&rows).unwrap()
}

fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    let ds = random_dataset(1, 5, 4);
    let x = [0.3, -1.2, 0.7, 2.0];
    for spec in [ObjectiveSpec::quadratic(), ObjectiveSpec::nonconvex(0.8)] {
        for i in 0..ds.len() {
            let g = model::per_sample_gradient(&spec, &ds, i, &x).unwrap();
            let fd = finite_difference(|p| model::sample_loss(&spec, &ds, i, p).unwrap(), &x);
            assert!(linalg::dist(&g, &fd) < 1e-6 * (1.0 + linalg::norm(&g)), "{spec:?} sample {i}");
        }
        let worlds = [ds.clone(), random_dataset(2, 7, 4)];
        let g = model::global_gradient(&spec, &worlds, &x).unwrap();
        let fd = finite_difference(|p| model::global_loss(&spec, &worlds, p).unwrap(), &x);
        assert!(linalg::dist(&g, &fd) < 1e-6 * (1.0 + linalg::norm(&g)));
    }
}

/// Stacks every sample with weight `1/(R n_r)` and solves by SVD.
fn least_squares_oracle(worlds: &[LocalDataset]) -> Vec<f64> {
    let dim = worlds[0].dim();
    let rows: usize = worlds.iter().map(|w| w.len()).sum();
    let mut a = DMatrix::<f64>::zeros(rows, dim);
    let mut y = DVector::<f64>::zeros(rows);
    let mut k = 0;
    for ds in worlds {
        let s = (1.0 / (worlds.len() * ds.len()) as f64).sqrt();
        for (w, resp) in ds.samples() {
            for j in 0..dim {
                a[(k, j)] = s * w[j];
            }
            y[k] = s * resp;
            k += 1;
        }
    }
    a.svd(true, true).solve(&y, 1e-14).unwrap().iter().copied().collect()
}

#[test]
fn quadratic_optimum_matches_least_squares() {
    for seed in 0..10 {
        let worlds: Vec<LocalDataset> = (0..4).map(|r| random_dataset(seed * 10 + r, 6 + r as usize, 3)).collect();
        let opt = model::quadratic_optimum(&worlds).unwrap();
        let oracle = least_squares_oracle(&worlds);
        assert!(linalg::dist(&opt, &oracle) < 1e-9 * (1.0 + linalg::norm(&oracle)));
        let g = model::global_gradient(&ObjectiveSpec::quadratic(), &worlds, &opt).unwrap();
        assert!(linalg::norm(&g) < 1e-10);
    }
}

fn hessian_dense(worlds: &[LocalDataset]) -> DMatrix<f64> {
    let dim = worlds[0].dim();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for ds in worlds {
        for (w, _) in ds.samples() {
            let v = DVector::from_column_slice(w);
            h += &v * v.transpose() / (worlds.len() * ds.len()) as f64;
        }
    }
    h
}

#[test]
fn curvature_matches_dense_eigendecomposition() {
    for seed in 0..10 {
        let worlds: Vec<LocalDataset> = (0..3).map(|r| random_dataset(seed * 7 + r, 12, 4)).collect();
        let eig = SymmetricEigen::new(hessian_dense(&worlds)).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let c = model::curvature_constants(&ObjectiveSpec::quadratic(), &worlds).unwrap();
        assert!((c.lipschitz - hi).abs() < 1e-6 * hi, "L {} vs {hi}", c.lipschitz);
        assert!((c.strong_convexity - lo).abs() < 1e-5 * hi, "mu {} vs {lo}", c.strong_convexity);
        let nc = model::curvature_constants(&ObjectiveSpec::nonconvex(0.5), &worlds).unwrap();
        assert!((nc.lipschitz - hi - 1.0).abs() < 1e-6 * hi);
    }
}

#[test]
fn deviation_eigenvalue_matches_dense() {
    for seed in 0..20u64 {
        let mut rng = stream(seed, StreamTag::Data, 1, 0);
        let pts: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let center: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let mut cov = DMatrix::<f64>::zeros(5, 5);
        for p in &pts {
            let v = DVector::from_vec(linalg::sub(p, &center));
            cov += &v * v.transpose() / 6.0;
        }
        let dense = SymmetricEigen::new(cov).eigenvalues.max();
        let got = rge::max_eig_deviation(&pts, &center);
        assert!((got - dense).abs() <= 1e-8 * dense, "seed {seed}: {got} vs {dense}");
    }
}

/// Best fitted value of `⟨s, w⟩` over a 0.001 grid of the capped simplex (n = 3).
fn grid_best(s: &[f64; 3], t: f64, cap: f64) -> f64 {
    let steps = 1000;
    let mut best = f64::INFINITY;
    for a in 0..=steps {
        for b in 0..=(steps - a) {
            let w = [a as f64 / steps as f64, b as f64 / steps as f64, (steps - a - b) as f64 / steps as f64];
            if w.iter().any(|&x| x > cap + 1e-12) {
                continue;
            }
            let r = t - (s[0] * w[0] + s[1] * w[1] + s[2] * w[2]);
            best = best.min(r * r);
        }
    }
    best
}

#[test]
fn saddle_matches_grid_search_in_one_dimension() {
    let pts = [0.0, 0.0, 10.0];
    let cap = 0.788;
    // In one dimension Y is the scalar 1, so Φ is the sum of per-column best fits.
    let oracle: f64 = pts.iter().map(|&t| grid_best(&pts, t, cap)).sum();
    assert!((oracle - 4.4944).abs() < 1e-9);
    let g = GradientMatrix::from_columns(&pts.iter().map(|&p| vec![p]).collect::<Vec<_>>()).unwrap();
    let sol = saddle::solve_saddle(&g, &[0, 1, 2], &[1.0; 3], cap).unwrap();
    assert!((sol.phi - oracle).abs() <= 0.02 * oracle, "phi {} vs grid {oracle}", sol.phi);
}

#[test]
fn column_fit_matches_grid_search() {
    let mut rng = stream(4, StreamTag::Data, 2, 0);
    for _ in 0..20 {
        let s = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let t = rng.random_range(-6.0..6.0);
        let cap = rng.random_range(0.34..1.0);
        let (w, fitted) = saddle::column_fit(&s, t, cap).unwrap();
        let residual = (t - fitted) * (t - fitted);
        assert!((linalg::dot(&s, &w) - fitted).abs() < 1e-9);
        // the grid only approaches the continuum optimum from above
        let grid = grid_best(&s, t, cap);
        assert!(residual <= grid + 1e-9);
        assert!(grid - residual < 0.05 * (1.0 + residual), "grid {grid} vs exact {residual}");
    }
}

#[test]
fn rand_k_enumeration_is_exactly_unbiased() {
    // d = 3, k = 1, n = 3, b = 1: 3 coordinate sets times 3 samples, each equally likely.
    let ds = random_dataset(8, 3, 3);
    let spec = ObjectiveSpec::quadratic();
    let x = [0.5, -0.25, 1.5];
    let full = model::local_full_gradient(&spec, &ds, &x).unwrap();
    let mut mean = [0.0; 3];
    let mut second = 0.0;
    let mut var = 0.0;
    let g2 =
        (0..3).map(|i| linalg::norm_sq(&model::per_sample_gradient(&spec, &ds, i, &x).unwrap())).sum::<f64>() / 3.0;
    for j in 0..3 {
        let set = CoordinateSet::new(3, vec![j]).unwrap();
        for i in 0..3 {
            let g = model::subset_gradient(&spec, &ds, &[i], &x).unwrap();
            let c = compression::select_scale(&g, &set).unwrap();
            for (m, v) in mean.iter_mut().zip(&c) {
                *m += v / 9.0;
            }
            second += linalg::norm_sq(&c) / 9.0;
            var += linalg::dist_sq(&c, &full) / 9.0;
        }
    }
    assert!(linalg::dist(&mean, &full) < 1e-12 * (1.0 + linalg::norm(&full)));
    assert!(second <= 3.0 * g2 + 1e-12);
    assert!(var <= 3.0 * g2 + 1e-12);
}

#[test]
fn rand_k_frequencies() {
    let mut rng = stream(5, StreamTag::Master, 0, 0);
    let draws = 30_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[compression::draw_coords(&mut rng, 3, 1).unwrap().indices()[0]] += 1;
    }
    let p = 1.0 / 3.0;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    for c in counts {
        assert!((c as f64 / draws as f64 - p).abs() < 3.0 * se, "{counts:?}");
    }
}

#[test]
fn full_batch_concentration_random_quadratics() {
    for seed in 0..100 {
        let spec = HeteroModelSpec::isotropic(4, 20, 15, 0.5, 1.0);
        let data = datagen::generate(&mut stream(seed, StreamTag::Data, 0, 0), &spec).unwrap();
        let mut rng = stream(seed, StreamTag::Probe, 0, 0);
        let x: Vec<f64> =
            (0..4).map(|_| 3.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let q = ObjectiveSpec::quadratic();
        let grads: Vec<Vec<f64>> = data.worlds.iter().map(|w| model::local_full_gradient(&q, w, &x).unwrap()).collect();
        let kappa = model::measure_kappa(&q, &data.worlds, &[x.clone().into()]).unwrap();
        let (lambda, ok) = rge::full_batch_concentration_check(&grads, kappa);
        assert!(ok, "seed {seed}: {lambda} vs 4 kappa^2 = {}", 4.0 * kappa * kappa);
    }
}

#[test]
fn planted_honest_removal_bound() {
    // Premise: σ₀² is the honest columns' measured spread.
    let m = 50;
    for (seed, eps) in (0..30u64).zip([0.1, 0.2, 0.25].into_iter().cycle()) {
        let inst = datagen::planted_gradients(
            &mut stream(seed, StreamTag::Data, 7, 0),
            m,
            20,
            1.0,
            eps,
            datagen::PlantedOutliers::Shift,
            50.0,
        )
        .unwrap();
        let inliers: Vec<&Vec<f64>> = inst.inliers.iter().map(|&i| &inst.columns[i]).collect();
        let sigma0_sq = rge::max_eig_deviation(&inliers, &inst.inlier_mean);
        let g = GradientMatrix::from_columns(&inst.columns).unwrap();
        let (_, report) = rge::estimate(&g, sigma0_sq, eps).unwrap();
        let alpha = 1.0 - eps;
        let bound = 2.0 * alpha * (1.0 - alpha) * m as f64 / (4.0 - alpha);
        let honest_removed = report.removed_indices.iter().filter(|i| inst.inliers.contains(i)).count();
        assert!(honest_removed as f64 <= bound, "seed {seed}: removed {honest_removed} > {bound}");
    }
}
