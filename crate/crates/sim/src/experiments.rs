//! Drivers for the subcommands: run the computation, write the output files.

use std::fs;
use std::path::Path;
use std::time::Instant;

use byzsgd_core::attacks::AttackSpec;
use byzsgd_core::datagen::{self, HeteroModelSpec};
use byzsgd_core::model::{LocalDataset, ObjectiveKind, ObjectiveSpec};
use byzsgd_core::seed::{self, StreamTag};
use byzsgd_core::trainer::{self, FilterStats, MetricsRow, TrainAbort, TrainConfig, TrainMode, TrainOutcome};
use byzsgd_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::diagnostics::{self, BenchSummary, KappaScan, RandKMoments, RandKMonteCarlo};
use crate::{io, stats, SimError};

/// Seed of replicate `i`. Replicate 0 of a single-replicate run uses `master` itself.
pub fn replicate_seed(master: u64, replicates: usize, i: usize) -> u64 {
    if replicates == 1 {
        master
    } else {
        seed::stream_seed(master, StreamTag::Replicate, i as u64, 0)
    }
}

/// Worker datasets plus the generating spec when they were synthesised.
pub struct Worlds {
    pub datasets: Vec<LocalDataset>,
    pub spec: Option<HeteroModelSpec>,
    pub kappa_mean: Option<f64>,
}

/// Loads `data.dataset_dir` when set, otherwise generates from `master`. The
/// data stays fixed across replicates; only the training randomness varies.
pub fn load_worlds(cfg: &RunConfig, master: u64) -> Result<Worlds, SimError> {
    let data = cfg.data()?;
    if let Some(dir) = &data.dataset_dir {
        let datasets = io::load_datasets(dir)?;
        return Ok(Worlds { datasets, spec: None, kappa_mean: None });
    }
    let spec = data.model_spec()?;
    let generated = datagen::generate(&mut seed::stream(master, StreamTag::Data, 0, 0), &spec)?;
    let kappa_mean = datagen::kappa_mean_theoretical(&spec, &generated.shifts)?;
    Ok(Worlds { datasets: generated.worlds, spec: Some(spec), kappa_mean: Some(kappa_mean) })
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, SimError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(SimError::config("--threads must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| SimError::runtime(format!("thread pool: {e}")))
}

/// Runs every replicate; results come back ordered by replicate index.
pub fn run_replicates(
    train: &TrainConfig,
    objective: &ObjectiveSpec,
    worlds: &[LocalDataset],
    attack: &AttackSpec,
    master: u64,
    replicates: usize,
    threads: Option<usize>,
) -> Result<Vec<Result<TrainOutcome, TrainAbort>>, SimError> {
    if replicates == 0 {
        return Err(SimError::config("replicates must be at least 1"));
    }
    let pool = pool(threads)?;
    Ok(pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|i| trainer::run_training(train, objective, worlds, attack, replicate_seed(master, replicates, i)))
            .collect()
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct Measured {
    pub lipschitz: f64,
    pub strong_convexity: f64,
    pub sigma_hat: f64,
    pub kappa_hat: f64,
    pub second_moment_hat: f64,
    pub kappa_mean_theoretical: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theoretical {
    pub sigma0_sq: f64,
    pub sigma0_overridden: bool,
    pub gamma: f64,
    pub eta: f64,
    pub eps_tilde: f64,
    pub success_probability: f64,
    /// `3L²Γ/μ⁴`, strongly convex objective only.
    pub dist_sq_ceiling: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateSummary {
    pub index: usize,
    pub seed: u64,
    pub rounds_completed: usize,
    pub final_metrics: Option<MetricsRow>,
    pub plateau_dist_sq: f64,
    pub filter: Option<FilterStats>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub experiment: String,
    pub config: RunConfig,
    pub master_seed: u64,
    pub replicates: usize,
    pub workers: usize,
    pub dim: usize,
    pub measured: Option<Measured>,
    pub theoretical: Option<Theoretical>,
    pub mean_final_dist_sq: f64,
    pub mean_final_grad_norm_sq: f64,
    pub mean_plateau_dist_sq: f64,
    pub runs: Vec<ReplicateSummary>,
    pub wall_clock_secs: f64,
}

/// Fraction of the trailing rounds used for plateau estimates.
pub const PLATEAU_FRACTION: f64 = 0.25;

fn summarize_outcome(index: usize, seed: u64, o: &TrainOutcome, error: Option<String>) -> ReplicateSummary {
    ReplicateSummary {
        index,
        seed,
        rounds_completed: o.metrics.len(),
        final_metrics: o.metrics.last().copied(),
        plateau_dist_sq: if o.metrics.is_empty() { f64::NAN } else { stats::plateau(&o.metrics, PLATEAU_FRACTION) },
        filter: Some(o.meta.filter.clone()),
        warnings: o.meta.warnings.clone(),
        error,
    }
}

fn theory(o: &TrainOutcome, objective: &ObjectiveSpec, kappa_mean: Option<f64>) -> (Measured, Theoretical) {
    let m = &o.meta;
    let ceiling = (objective.kind == ObjectiveKind::StronglyConvexQuadratic && m.strong_convexity > 0.0)
        .then(|| 3.0 * m.lipschitz * m.lipschitz / m.strong_convexity.powi(4) * m.gamma);
    (
        Measured {
            lipschitz: m.lipschitz,
            strong_convexity: m.strong_convexity,
            sigma_hat: m.sigma_hat,
            kappa_hat: m.kappa_hat,
            second_moment_hat: m.second_moment_hat,
            kappa_mean_theoretical: kappa_mean,
        },
        Theoretical {
            sigma0_sq: m.sigma0_sq,
            sigma0_overridden: m.sigma0_overridden,
            gamma: m.gamma,
            eta: m.eta,
            eps_tilde: m.eps_tilde,
            success_probability: m.success_probability,
            dist_sq_ceiling: ceiling,
        },
    )
}

fn is_setup_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter(_)
            | Error::BatchSize { .. }
            | Error::CoordinateCount { .. }
            | Error::DimensionMismatch { .. }
            | Error::NoWorkers
            | Error::EmptyDataset
            | Error::NotPsd { .. }
    )
}

/// The train subcommand. Writes `metrics.csv`, `metrics_all.csv`,
/// `summary.json` and one directory per replicate under `replicates/`.
pub fn train(
    cfg: &RunConfig,
    master: u64,
    replicates: usize,
    threads: Option<usize>,
    out: &Path,
) -> Result<TrainSummary, SimError> {
    let start = Instant::now();
    let train_cfg = cfg.train()?.train_config()?;
    let attack = cfg.attack_spec()?;
    let objective = cfg.objective.spec();
    let worlds = load_worlds(cfg, master)?;
    if train_cfg.mode == TrainMode::CompressedSgd && train_cfg.coords.is_none() {
        return Err(SimError::config("compressed_sgd needs train.coords"));
    }
    let results = run_replicates(&train_cfg, &objective, &worlds.datasets, &attack, master, replicates, threads)?;

    if let Some(Err(abort)) = results.iter().find(|r| matches!(r, Err(a) if a.partial.is_none())) {
        let msg = abort.error.to_string();
        return Err(if is_setup_error(&abort.error) { SimError::config(msg) } else { SimError::runtime(msg) });
    }

    fs::create_dir_all(out)?;
    let mut runs = Vec::with_capacity(replicates);
    let mut all_metrics = Vec::with_capacity(replicates);
    let mut first_error = None;
    let mut reference = None;
    for (i, res) in results.iter().enumerate() {
        let seed = replicate_seed(master, replicates, i);
        let (outcome, error) = match res {
            Ok(o) => (o, None),
            Err(a) => {
                let msg = format!("replicate {i}: {}", a.error);
                first_error.get_or_insert_with(|| msg.clone());
                (a.partial.as_deref().expect("setup failures returned above"), Some(a.error.to_string()))
            }
        };
        reference.get_or_insert(outcome);
        let dir = out.join("replicates").join(format!("r{i}"));
        fs::create_dir_all(&dir)?;
        io::write_metrics(fs::File::create(dir.join("metrics.csv"))?, &outcome.metrics)?;
        let summary = summarize_outcome(i, seed, outcome, error);
        io::write_json(&dir.join("summary.json"), &summary)?;
        runs.push(summary);
        all_metrics.push(outcome.metrics.clone());
    }

    if replicates == 1 {
        io::write_metrics(fs::File::create(out.join("metrics.csv"))?, &all_metrics[0])?;
    } else {
        io::write_mean_metrics(fs::File::create(out.join("metrics.csv"))?, &all_metrics)?;
    }
    io::write_merged_metrics(fs::File::create(out.join("metrics_all.csv"))?, &all_metrics)?;

    let (measured, theoretical) = match reference {
        Some(o) => {
            let (m, t) = theory(o, &objective, worlds.kappa_mean);
            (Some(m), Some(t))
        }
        None => (None, None),
    };
    let finals: Vec<&MetricsRow> = runs.iter().filter_map(|r| r.final_metrics.as_ref()).collect();
    let summary = TrainSummary {
        experiment: cfg.experiment.name.clone(),
        config: cfg.clone(),
        master_seed: master,
        replicates,
        workers: worlds.datasets.len(),
        dim: worlds.datasets[0].dim(),
        measured,
        theoretical,
        mean_final_dist_sq: stats::mean(&finals.iter().map(|r| r.dist_sq_to_opt).collect::<Vec<_>>()),
        mean_final_grad_norm_sq: stats::mean(&finals.iter().map(|r| r.grad_norm_sq).collect::<Vec<_>>()),
        mean_plateau_dist_sq: stats::mean(&runs.iter().map(|r| r.plateau_dist_sq).collect::<Vec<_>>()),
        runs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    match first_error {
        Some(msg) => Err(SimError::runtime(msg)),
        None => Ok(summary),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SimError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RgeBenchReport {
    pub summaries: Vec<BenchSummary>,
    pub all_within_bound: bool,
    pub invariant_failures: usize,
    pub wall_clock_secs: f64,
}

/// Writes `rge_bench.csv` (one row per instance) and `rge_bench_summary.json`.
pub fn rge_bench(cfg: &RunConfig, master: u64, out: &Path) -> Result<RgeBenchReport, SimError> {
    let start = Instant::now();
    let (records, summaries) = diagnostics::rge_bench(master, &cfg.rge_bench)?;
    fs::create_dir_all(out)?;
    write_rows(&out.join("rge_bench.csv"), &records)?;
    let report = RgeBenchReport {
        all_within_bound: summaries.iter().all(|s| s.within_bound == s.runs),
        invariant_failures: records.iter().filter(|r| !r.invariants_ok).count(),
        summaries,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    io::write_json(&out.join("rge_bench_summary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub seeds: usize,
    pub holds_in_all: bool,
    pub max_ratio: f64,
}

/// Writes `concentration.csv` and `concentration_summary.json`.
pub fn concentration_check(cfg: &RunConfig, master: u64, out: &Path) -> Result<ConcentrationReport, SimError> {
    let rows = diagnostics::concentration_check(master, &cfg.concentration)?;
    fs::create_dir_all(out)?;
    write_rows(&out.join("concentration.csv"), &rows)?;
    let report = ConcentrationReport {
        seeds: rows.len(),
        holds_in_all: rows.iter().all(|r| r.holds),
        max_ratio: rows.iter().map(|r| r.best_lambda / r.bound).fold(0.0, f64::max),
    };
    io::write_json(&out.join("concentration_summary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressReport {
    pub exhaustive: Option<RandKMoments>,
    pub monte_carlo: RandKMonteCarlo,
}

/// Exhaustive moments when `C(d,k)·C(n,b)` is small, Monte-Carlo always.
/// Writes `compress_check.json`.
pub fn compress_check(cfg: &RunConfig, master: u64, out: &Path) -> Result<CompressReport, SimError> {
    let c = &cfg.compress_check;
    if c.coords == 0 || c.coords > c.dim || c.batch == 0 || c.batch > c.samples || c.draws < 2 {
        return Err(SimError::config("compress_check needs 1 <= coords <= dim, 1 <= batch <= samples, draws >= 2"));
    }
    let (ds, x) = diagnostics::single_worker_instance(master, c.dim, c.samples, c.noise_std)?;
    let q = ObjectiveSpec::quadratic();
    let pairs = binomial(c.dim, c.coords).saturating_mul(binomial(c.samples, c.batch));
    let exhaustive =
        if pairs <= 1_000_000 { Some(diagnostics::enumerate_rand_k(&q, &ds, &x, c.coords, c.batch)?) } else { None };
    let monte_carlo = diagnostics::monte_carlo_rand_k(master, &q, &ds, &x, c.coords, c.batch, c.draws)?;
    fs::create_dir_all(out)?;
    let report = CompressReport { exhaustive, monte_carlo };
    io::write_json(&out.join("compress_check.json"), &report)?;
    Ok(report)
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Writes `kappa_scan.csv` and `kappa_scan_summary.json`.
pub fn kappa_scan(cfg: &RunConfig, master: u64, out: &Path) -> Result<KappaScan, SimError> {
    let scan = diagnostics::kappa_scan(master, &cfg.kappa_scan)?;
    fs::create_dir_all(out)?;
    write_rows(&out.join("kappa_scan.csv"), &scan.rows)?;
    io::write_json(&out.join("kappa_scan_summary.json"), &scan)?;
    Ok(scan)
}
