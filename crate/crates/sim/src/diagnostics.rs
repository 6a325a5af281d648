//! Diagnostic computations behind the non-training subcommands.

use byzsgd_core::compression::{self, CoordinateSet};
use byzsgd_core::datagen::{self, HeteroModelSpec, PlantedOutliers};
use byzsgd_core::linalg;
use byzsgd_core::model::{self, DomainSpec, LocalDataset, ObjectiveSpec, ParameterPoint};
use byzsgd_core::rge::{self, GradientMatrix};
use byzsgd_core::seed::{self, StreamTag};
use itertools::Itertools;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{ConcentrationSection, KappaScanSection, RgeBenchSection};
use crate::{stats, SimError};

/// Largest `m` accepted by [`brute_force_subset_concentration`].
pub const ENUMERATION_BUDGET: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetConcentration {
    pub best_lambda: f64,
    pub bound: f64,
    pub holds: bool,
    pub best_subset: Vec<usize>,
}

/// Minimum over all subsets of size `⌈(1−ε′)m⌉` of the top eigenvalue of
/// `(1/|S|) Σ_{i∈S} (y_i − μ_i)(y_i − μ_i)ᵀ`, against
/// `(4σ²_max/ε′)(1 + d/((1−ε′)m))`.
pub fn brute_force_subset_concentration(
    points: &[Vec<f64>],
    means: &[Vec<f64>],
    sigma_max_sq: f64,
    eps_prime: f64,
) -> Result<SubsetConcentration, SimError> {
    let m = points.len();
    if m == 0 || m != means.len() {
        return Err(SimError::config(format!("need equally many points and means, got {m} and {}", means.len())));
    }
    if m > ENUMERATION_BUDGET {
        return Err(SimError::config(format!("enumeration budget is {ENUMERATION_BUDGET} points, got {m}")));
    }
    if !(eps_prime > 0.0 && eps_prime < 1.0) {
        return Err(SimError::config(format!("eps_prime must lie in (0, 1), got {eps_prime}")));
    }
    let d = points[0].len();
    let dev: Vec<Vec<f64>> = points.iter().zip(means).map(|(y, mu)| linalg::sub(y, mu)).collect();
    let size = ((1.0 - eps_prime) * m as f64 - 1e-9).ceil() as usize;
    let zero = vec![0.0; d];
    let mut best = (f64::INFINITY, Vec::new());
    for subset in (0..m).combinations(size) {
        let chosen: Vec<&[f64]> = subset.iter().map(|&i| dev[i].as_slice()).collect();
        let lambda = rge::max_eig_deviation(&chosen, &zero);
        if lambda < best.0 {
            best = (lambda, subset);
        }
    }
    let bound = 4.0 * sigma_max_sq / eps_prime * (1.0 + d as f64 / ((1.0 - eps_prime) * m as f64));
    Ok(SubsetConcentration { best_lambda: best.0, bound, holds: best.0 <= bound, best_subset: best.1 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub seed: usize,
    pub best_lambda: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Gaussian points `y_i ~ N(μ_i, σ_i² I)` with `μ_i ~ N(0, 25 I)` and `σ_i`
/// uniform in the configured range.
pub fn concentration_check(master: u64, cfg: &ConcentrationSection) -> Result<Vec<ConcentrationRow>, SimError> {
    if !(cfg.sigma_min >= 0.0 && cfg.sigma_max >= cfg.sigma_min) {
        return Err(SimError::config("need 0 <= sigma_min <= sigma_max"));
    }
    (0..cfg.seeds)
        .map(|s| {
            let mut rng = seed::stream(master, StreamTag::Data, s as u64, 12);
            let mut points = Vec::with_capacity(cfg.points);
            let mut means = Vec::with_capacity(cfg.points);
            let mut sigma_max_sq: f64 = 0.0;
            for _ in 0..cfg.points {
                let mu: Vec<f64> = (0..cfg.dim).map(|_| 5.0 * normal(&mut rng)).collect();
                let sigma = cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * rand::Rng::random::<f64>(&mut rng);
                sigma_max_sq = sigma_max_sq.max(sigma * sigma);
                points.push(mu.iter().map(|m| m + sigma * normal(&mut rng)).collect());
                means.push(mu);
            }
            let res = brute_force_subset_concentration(&points, &means, sigma_max_sq, cfg.eps_prime)?;
            Ok(ConcentrationRow { seed: s, best_lambda: res.best_lambda, bound: res.bound, holds: res.holds })
        })
        .collect()
}

fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Exact moments of the rand-k message over every coordinate set and batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandKMoments {
    pub mean: Vec<f64>,
    pub full_gradient: Vec<f64>,
    /// `E‖message − ∇F_r‖²`.
    pub variance: f64,
    /// `(d/k) Ĝ² / b` with `Ĝ²` the exact per-sample second moment at `x`.
    pub variance_bound: f64,
    pub max_bias: f64,
}

fn second_moment(spec: &ObjectiveSpec, ds: &LocalDataset, x: &[f64]) -> Result<f64, SimError> {
    let total: f64 = (0..ds.len())
        .map(|i| model::per_sample_gradient(spec, ds, i, x).map(|g| linalg::norm_sq(&g)))
        .sum::<Result<f64, _>>()?;
    Ok(total / ds.len() as f64)
}

/// Averages over all `C(d, k) · C(n, b)` equally likely (K, batch) pairs.
pub fn enumerate_rand_k(
    spec: &ObjectiveSpec,
    ds: &LocalDataset,
    x: &[f64],
    k: usize,
    b: usize,
) -> Result<RandKMoments, SimError> {
    let d = ds.dim();
    let full = model::local_full_gradient(spec, ds, x)?;
    let mut mean = vec![0.0; d];
    let mut var = 0.0;
    let mut count = 0usize;
    for coords in (0..d).combinations(k) {
        let set = CoordinateSet::new(d, coords)?;
        for batch in (0..ds.len()).combinations(b) {
            let msg = compression::select_scale(&model::subset_gradient(spec, ds, &batch, x)?, &set)?;
            linalg::axpy(1.0, &msg, &mut mean);
            var += linalg::dist_sq(&msg, &full);
            count += 1;
        }
    }
    linalg::scale(1.0 / count as f64, &mut mean);
    let g2 = second_moment(spec, ds, x)?;
    Ok(RandKMoments {
        max_bias: mean.iter().zip(&full).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        mean,
        full_gradient: full,
        variance: var / count as f64,
        variance_bound: d as f64 / k as f64 * g2 / b as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandKMonteCarlo {
    pub draws: usize,
    /// Largest `|mean_j − ∇F_r(x)_j| / se_j` over coordinates.
    pub max_z: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub variance_bound: f64,
}

pub fn monte_carlo_rand_k(
    master: u64,
    spec: &ObjectiveSpec,
    ds: &LocalDataset,
    x: &[f64],
    k: usize,
    b: usize,
    draws: usize,
) -> Result<RandKMonteCarlo, SimError> {
    let d = ds.dim();
    let full = model::local_full_gradient(spec, ds, x)?;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut var = 0.0;
    let mut var_sq = 0.0;
    let mut master_rng = seed::stream(master, StreamTag::Master, 0, 0);
    let mut worker_rng = seed::stream(master, StreamTag::Worker, 0, 0);
    for _ in 0..draws {
        let set = compression::draw_coords(&mut master_rng, d, k)?;
        let msg = compression::compressed_minibatch_gradient(&mut worker_rng, spec, ds, b, x, &set)?;
        for j in 0..d {
            sum[j] += msg[j];
            sum_sq[j] += msg[j] * msg[j];
        }
        let e = linalg::dist_sq(&msg, &full);
        var += e;
        var_sq += e * e;
    }
    let n = draws as f64;
    let mut max_z: f64 = 0.0;
    for j in 0..d {
        let m = sum[j] / n;
        let sd = ((sum_sq[j] / n - m * m).max(0.0) * n / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        let z = if se > 0.0 {
            (m - full[j]).abs() / se
        } else if m == full[j] {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
    }
    let g2 = second_moment(spec, ds, x)?;
    let variance = var / n;
    let variance_se = ((var_sq / n - variance * variance).max(0.0) / (n - 1.0)).sqrt();
    Ok(RandKMonteCarlo { draws, max_z, variance, variance_se, variance_bound: d as f64 / k as f64 * g2 / b as f64 })
}

/// One worker's data from the heterogeneous generator plus a random test point.
pub fn single_worker_instance(
    master: u64,
    dim: usize,
    samples: usize,
    noise_std: f64,
) -> Result<(LocalDataset, Vec<f64>), SimError> {
    let mut spec = HeteroModelSpec::isotropic(dim, 1, samples, noise_std, 0.0);
    spec.base_param = Some(vec![1.0; dim]);
    let data = datagen::generate(&mut seed::stream(master, StreamTag::Data, dim as u64, samples as u64), &spec)?;
    let mut rng = seed::stream(master, StreamTag::Probe, dim as u64, 0);
    let x: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    Ok((data.worlds.into_iter().next().expect("one worker"), x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaScanRow {
    pub samples: usize,
    pub kappa_mean: f64,
    pub kappa_hat_mean: f64,
    /// Seed average of `|κ̂ − κ_mean|`.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaScan {
    pub rows: Vec<KappaScanRow>,
    /// Log-log slope of the deviation against `n`.
    pub slope: f64,
}

/// `κ̂` over a fixed probe set for each per-worker sample size.
pub fn kappa_scan(master: u64, cfg: &KappaScanSection) -> Result<KappaScan, SimError> {
    if cfg.sizes.len() < 2 || cfg.seeds == 0 {
        return Err(SimError::config("kappa scan needs at least two sizes and one seed"));
    }
    let dom = DomainSpec::ball(cfg.probe_radius);
    let q = ObjectiveSpec::quadratic();
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let spec = HeteroModelSpec::isotropic(cfg.dim, cfg.workers, n, cfg.noise_std, cfg.shift_radius);
        let mut hats = Vec::new();
        let mut devs = Vec::new();
        let mut kappa_mean = 0.0;
        for s in 0..cfg.seeds {
            let data = datagen::generate(&mut seed::stream(master, StreamTag::Data, s as u64, n as u64), &spec)?;
            kappa_mean = datagen::kappa_mean_theoretical(&spec, &data.shifts)?;
            let mut prng = seed::stream(master, StreamTag::Probe, s as u64, 0);
            let probes: Vec<ParameterPoint> = model::probe_points(&mut prng, cfg.dim, &dom, None);
            let hat = model::measure_kappa(&q, &data.worlds, &probes)?;
            hats.push(hat);
            devs.push((hat - kappa_mean).abs());
        }
        rows.push(KappaScanRow {
            samples: n,
            kappa_mean,
            kappa_hat_mean: stats::mean(&hats),
            deviation: stats::mean(&devs),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.samples as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.deviation.ln()).collect();
    Ok(KappaScan { slope: stats::linear_fit(&lx, &ly).0, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub outliers: PlantedOutliers,
    pub eps_tilde: f64,
    pub seed: usize,
    pub error: f64,
    pub naive_error: f64,
    pub bound: f64,
    pub rounds: usize,
    pub removed: usize,
    pub honest_removed: usize,
    pub invariants_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub outliers: PlantedOutliers,
    pub eps_tilde: f64,
    pub runs: usize,
    pub within_bound: usize,
    pub max_error: f64,
    pub median_error: f64,
    pub median_naive_error: f64,
    pub bound: f64,
}

/// The filter on planted instances, with `σ₀²` set to the inliers' nominal variance.
pub fn rge_bench(master: u64, cfg: &RgeBenchSection) -> Result<(Vec<BenchRecord>, Vec<BenchSummary>), SimError> {
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (oi, &outliers) in cfg.outliers.iter().enumerate() {
        for (ei, &eps) in cfg.eps_values.iter().enumerate() {
            let bound = rge::UPSILON_CONST * cfg.sigma0 * eps.sqrt();
            let mut group = Vec::with_capacity(cfg.seeds);
            for s in 0..cfg.seeds {
                let mut rng = seed::stream(master, StreamTag::Data, s as u64, (oi * 1000 + ei) as u64);
                let inst = datagen::planted_gradients(
                    &mut rng,
                    cfg.workers,
                    cfg.dim,
                    cfg.sigma0,
                    eps,
                    outliers,
                    cfg.distance * cfg.sigma0,
                )?;
                let g = GradientMatrix::from_columns(&inst.columns)?;
                let (ghat, report) = rge::estimate(&g, cfg.sigma0 * cfg.sigma0, eps)?;
                let naive = g.mean_of(&(0..cfg.workers).collect::<Vec<_>>());
                group.push(BenchRecord {
                    outliers,
                    eps_tilde: eps,
                    seed: s,
                    error: linalg::dist(&ghat, &inst.inlier_mean),
                    naive_error: linalg::dist(&naive, &inst.inlier_mean),
                    bound,
                    rounds: report.rounds,
                    removed: report.removed_indices.len(),
                    honest_removed: report.removed_indices.iter().filter(|i| inst.inliers.contains(i)).count(),
                    invariants_ok: rge::check_report_invariants(&report, cfg.workers).is_ok(),
                });
            }
            let errors: Vec<f64> = group.iter().map(|r| r.error).collect();
            let naive: Vec<f64> = group.iter().map(|r| r.naive_error).collect();
            summaries.push(BenchSummary {
                outliers,
                eps_tilde: eps,
                runs: group.len(),
                within_bound: group.iter().filter(|r| r.error <= r.bound).count(),
                max_error: errors.iter().copied().fold(0.0, f64::max),
                median_error: stats::median(&errors),
                median_naive_error: stats::median(&naive),
                bound,
            });
            records.extend(group);
        }
    }
    Ok((records, summaries))
}
