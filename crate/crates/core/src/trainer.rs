//! Byzantine-resilient training loops: mini-batch SGD, full-batch gradient
//! descent and rand-k compressed SGD, all aggregating through [`rge::estimate`].
//!
//! Randomness per round `t`: worker `r` samples from
//! `stream(master, Worker, r, t)`; the corrupt set comes from
//! [`attacks::choose_corrupt_set`] under the adversary tag and attack noise from
//! `stream(master, Adversary, t, 1)`; the coordinate set `K^t` is drawn from
//! `stream(master, Master, t, 0)` (or `(t, r + 1)` per worker when coordinates
//! are not shared). Probe points for the measured constants use
//! `stream(master, Probe, 0, 0)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackContext, AttackKind, AttackSpec};
use crate::compression::{self, CoordinateSet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, DomainSpec, LocalDataset, ObjectiveKind, ObjectiveSpec, ParameterPoint};
use crate::rge::{self, GradientMatrix, UPSILON_CONST};
use crate::seed::{self, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Sgd,
    FullGd,
    CompressedSgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrRule {
    StronglyConvex,
    Nonconvex,
    Manual(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub mode: TrainMode,
    /// Mini-batch size (ignored by `full_gd`).
    pub batch: usize,
    /// Retained coordinates for `compressed_sgd`.
    pub coords: Option<usize>,
    /// Corrupt fraction the master plans for.
    pub eps: f64,
    pub eps_prime: f64,
    pub lr_rule: LrRule,
    pub domain: DomainSpec,
    pub sigma0_override: Option<f64>,
    /// One coordinate set per round for all workers. `false` draws an
    /// independent set per worker and decodes in the full space.
    pub shared_coords: bool,
    pub upsilon_const: f64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, iterations: usize, batch: usize, eps: f64, eps_prime: f64, lr_rule: LrRule) -> Self {
        Self {
            iterations,
            mode,
            batch,
            coords: None,
            eps,
            eps_prime,
            lr_rule,
            domain: DomainSpec::unbounded(),
            sigma0_override: None,
            shared_coords: true,
            upsilon_const: UPSILON_CONST,
        }
    }

    fn validate(&self, dim: usize, min_samples: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        self.domain.validate()?;
        if !(0.0..0.5).contains(&self.eps) || !(self.eps_prime >= 0.0) || self.eps + self.eps_prime >= 1.0 {
            return Err(Error::InvalidParameter(format!("bad eps/eps_prime: {} / {}", self.eps, self.eps_prime)));
        }
        if self.mode != TrainMode::FullGd && (self.batch == 0 || self.batch > min_samples) {
            return Err(Error::BatchSize { batch: self.batch, available: min_samples });
        }
        if self.mode == TrainMode::CompressedSgd {
            let k = self.coords.ok_or_else(|| Error::InvalidParameter("compressed mode needs coords".into()))?;
            if k == 0 || k > dim {
                return Err(Error::CoordinateCount { k, dim });
            }
        }
        if let Some(s) = self.sigma0_override {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "sigma0 override must be finite and nonnegative, got {s}"
                )));
            }
        }
        if let LrRule::Manual(eta) = self.lr_rule {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::InvalidParameter(format!("manual learning rate must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

/// Step size for the rule: `μ/L²`, `1/(4L)` or the manual value.
pub fn learning_rate(rule: LrRule, lipschitz: f64, strong_convexity: f64) -> Result<f64> {
    match rule {
        LrRule::Manual(eta) => Ok(eta),
        _ if !(lipschitz > 0.0) => Err(Error::InvalidParameter(format!("L must be positive, got {lipschitz}"))),
        LrRule::StronglyConvex if !(strong_convexity > 0.0) => {
            Err(Error::InvalidParameter("strongly convex rule needs mu > 0".into()))
        }
        LrRule::StronglyConvex => Ok(strong_convexity / (lipschitz * lipschitz)),
        LrRule::Nonconvex => Ok(1.0 / (4.0 * lipschitz)),
    }
}

/// `Γ = 9σ²/((1−ε−ε′)bR) + 9κ² + 9Υ²` with `Υ² = C² σ₀² (ε+ε′)`.
#[allow(clippy::too_many_arguments)]
pub fn gamma_bound(
    sigma: f64,
    kappa: f64,
    b: usize,
    workers: usize,
    d: usize,
    eps: f64,
    eps_prime: f64,
    upsilon_const: f64,
) -> Result<f64> {
    let s0 = rge::default_sigma0_sq(sigma, b, kappa, eps, eps_prime, d, workers)?;
    let honest = 1.0 - eps - eps_prime;
    let upsilon_sq = upsilon_const * upsilon_const * s0 * (eps + eps_prime);
    Ok(9.0 * sigma * sigma / (honest * b as f64 * workers as f64) + 9.0 * kappa * kappa + 9.0 * upsilon_sq)
}

/// Compressed counterpart of [`gamma_bound`], with `σ²` replaced by `(d/k) G²`.
#[allow(clippy::too_many_arguments)]
pub fn gamma_bound_compressed(
    g2: f64,
    kappa: f64,
    b: usize,
    workers: usize,
    d: usize,
    k: usize,
    eps: f64,
    eps_prime: f64,
    upsilon_const: f64,
) -> Result<f64> {
    let s0 = rge::default_sigma0_sq_compressed(g2, b, kappa, eps, eps_prime, d, k, workers)?;
    let honest = 1.0 - eps - eps_prime;
    let upsilon_sq = upsilon_const * upsilon_const * s0 * (eps + eps_prime);
    Ok(9.0 * d as f64 * g2 / (honest * k as f64 * b as f64 * workers as f64) + 9.0 * kappa * kappa + 9.0 * upsilon_sq)
}

/// Full-batch radius `4κ²` and floor `6κ² + 6 C² σ₀² ε`.
pub fn full_gd_constants(kappa: f64, eps: f64, upsilon_const: f64) -> (f64, f64) {
    let s0 = 4.0 * kappa * kappa;
    (s0, 6.0 * kappa * kappa + 6.0 * upsilon_const * upsilon_const * s0 * eps)
}

/// `1 − T exp(−ε′²(1−ε)R/16)`, clamped at zero.
pub fn success_probability(iterations: usize, eps: f64, eps_prime: f64, workers: usize) -> f64 {
    let fail = iterations as f64 * libm::exp(-eps_prime * eps_prime * (1.0 - eps) * workers as f64 / 16.0);
    (1.0 - fail).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// 1-based; the row describes the filter call of that round and the iterate it produced.
    pub round: usize,
    /// `‖x − x*‖²`, NaN for the nonconvex objective.
    pub dist_sq_to_opt: f64,
    pub grad_norm_sq: f64,
    /// `‖ĝ − mean of the honest columns‖`.
    pub est_error: f64,
    pub active_count: usize,
    pub honest_removed: usize,
    pub filter_rounds: usize,
    pub sum_c_tau_final: f64,
}

/// Aggregate filter diagnostics over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub calls: usize,
    pub saddle_nonconverged: usize,
    pub invariant_violations: usize,
    pub max_rounds: usize,
    pub min_active: usize,
    pub min_support: usize,
    pub columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub lipschitz: f64,
    pub strong_convexity: f64,
    pub sigma_hat: f64,
    pub kappa_hat: f64,
    pub second_moment_hat: f64,
    pub sigma0_sq: f64,
    pub sigma0_overridden: bool,
    pub eps_tilde: f64,
    pub gamma: f64,
    pub eta: f64,
    pub success_probability: f64,
    /// `x*` for the quadratic objective, the quadratic-part optimum otherwise (if unique).
    pub reference_point: Option<ParameterPoint>,
    pub warnings: Vec<String>,
    pub filter: FilterStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// `x⁰ … x^T`.
    pub trajectory: Vec<ParameterPoint>,
    pub metrics: Vec<MetricsRow>,
    pub meta: TrainMeta,
}

/// A run that stopped early. `partial` holds everything up to the failing round
/// when the failure happened after setup.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainAbort {
    pub error: Error,
    pub partial: Option<alloc::boxed::Box<TrainOutcome>>,
}

impl From<Error> for TrainAbort {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

/// Constants measured from the data before the first round.
pub fn prepare_meta(
    cfg: &TrainConfig,
    objective: &ObjectiveSpec,
    worlds: &[LocalDataset],
    master_seed: u64,
) -> Result<TrainMeta> {
    let first = worlds.first().ok_or(Error::NoWorkers)?;
    let dim = first.dim();
    let min_samples = worlds.iter().map(|w| w.len()).min().unwrap_or(0);
    if min_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    cfg.validate(dim, min_samples)?;
    let workers = worlds.len();
    let curv = model::curvature_constants(objective, worlds)?;
    let reference = match objective.kind {
        ObjectiveKind::StronglyConvexQuadratic => Some(model::quadratic_optimum(worlds)?),
        ObjectiveKind::SmoothNonconvex => model::quadratic_optimum(worlds).ok(),
    };
    let mut probe_rng = seed::stream(master_seed, StreamTag::Probe, 0, 0);
    let probes = model::probe_points(&mut probe_rng, dim, &cfg.domain, reference.as_ref());
    let sigma_hat = model::measure_sigma(objective, worlds, &probes)?;
    let kappa_hat = model::measure_kappa(objective, worlds, &probes)?;
    let second_moment_hat = model::measure_second_moment(objective, worlds, &probes)?;
    let eta = learning_rate(cfg.lr_rule, curv.lipschitz, curv.strong_convexity)?;

    let mut warnings = Vec::new();
    let planned = match cfg.mode {
        TrainMode::FullGd => cfg.eps,
        _ => cfg.eps + cfg.eps_prime,
    };
    let eps_tilde = if planned > 0.25 {
        warnings.push(format!("planned corrupt fraction {planned} exceeds 1/4; the filter runs at 1/4"));
        0.25
    } else {
        planned
    };
    let (sigma0_theory, gamma) = match cfg.mode {
        TrainMode::FullGd => full_gd_constants(kappa_hat, cfg.eps, cfg.upsilon_const),
        TrainMode::Sgd | TrainMode::CompressedSgd if cfg.eps_prime <= 0.0 => {
            return Err(Error::InvalidParameter("stochastic modes need eps_prime > 0".into()))
        }
        TrainMode::Sgd => (
            rge::default_sigma0_sq(sigma_hat, cfg.batch, kappa_hat, cfg.eps, cfg.eps_prime, dim, workers)?,
            gamma_bound(sigma_hat, kappa_hat, cfg.batch, workers, dim, cfg.eps, cfg.eps_prime, cfg.upsilon_const)?,
        ),
        TrainMode::CompressedSgd => {
            let k = cfg.coords.unwrap_or(dim);
            (
                rge::default_sigma0_sq_compressed(
                    second_moment_hat,
                    cfg.batch,
                    kappa_hat,
                    cfg.eps,
                    cfg.eps_prime,
                    dim,
                    k,
                    workers,
                )?,
                gamma_bound_compressed(
                    second_moment_hat,
                    kappa_hat,
                    cfg.batch,
                    workers,
                    dim,
                    k,
                    cfg.eps,
                    cfg.eps_prime,
                    cfg.upsilon_const,
                )?,
            )
        }
    };
    let success = match cfg.mode {
        TrainMode::FullGd => 1.0,
        _ => success_probability(cfg.iterations, cfg.eps, cfg.eps_prime, workers),
    };
    Ok(TrainMeta {
        lipschitz: curv.lipschitz,
        strong_convexity: curv.strong_convexity,
        sigma_hat,
        kappa_hat,
        second_moment_hat,
        sigma0_sq: cfg.sigma0_override.unwrap_or(sigma0_theory),
        sigma0_overridden: cfg.sigma0_override.is_some(),
        eps_tilde,
        gamma,
        eta,
        success_probability: success,
        reference_point: reference,
        warnings,
        filter: FilterStats { min_active: usize::MAX, ..FilterStats::default() },
    })
}

/// Honest messages of one round plus the coordinate set used to restrict them.
struct RoundMessages {
    columns: Vec<Vec<f64>>,
    coords: Option<CoordinateSet>,
}

fn honest_messages(
    cfg: &TrainConfig,
    objective: &ObjectiveSpec,
    worlds: &[LocalDataset],
    x: &[f64],
    master_seed: u64,
    t: u64,
) -> Result<RoundMessages> {
    let dim = x.len();
    match cfg.mode {
        TrainMode::FullGd => Ok(RoundMessages {
            columns: worlds.iter().map(|ds| model::local_full_gradient(objective, ds, x)).collect::<Result<_>>()?,
            coords: None,
        }),
        TrainMode::Sgd => {
            let mut columns = Vec::with_capacity(worlds.len());
            for (r, ds) in worlds.iter().enumerate() {
                let mut rng = seed::stream(master_seed, StreamTag::Worker, r as u64, t);
                columns.push(model::minibatch_gradient(&mut rng, objective, ds, cfg.batch, x)?);
            }
            Ok(RoundMessages { columns, coords: None })
        }
        TrainMode::CompressedSgd => {
            let k = cfg.coords.unwrap_or(dim);
            let shared = if cfg.shared_coords {
                Some(compression::draw_coords(&mut seed::stream(master_seed, StreamTag::Master, t, 0), dim, k)?)
            } else {
                None
            };
            let mut columns = Vec::with_capacity(worlds.len());
            for (r, ds) in worlds.iter().enumerate() {
                let mut rng = seed::stream(master_seed, StreamTag::Worker, r as u64, t);
                let g = model::minibatch_gradient(&mut rng, objective, ds, cfg.batch, x)?;
                columns.push(match &shared {
                    Some(set) => compression::restrict_scaled(&g, set)?,
                    None => {
                        let mut mrng = seed::stream(master_seed, StreamTag::Master, t, r as u64 + 1);
                        compression::select_scale(&g, &compression::draw_coords(&mut mrng, dim, k)?)?
                    }
                });
            }
            Ok(RoundMessages { columns, coords: shared })
        }
    }
}

/// A constant attack vector given in `R^d` is restricted to the round's coordinates.
fn attack_for_round(attack: &AttackSpec, coords: Option<&CoordinateSet>) -> Result<AttackSpec> {
    match (&attack.kind, coords) {
        (AttackKind::Constant { vector }, Some(set)) if vector.len() == set.dim() && vector.len() > 1 => {
            Ok(AttackSpec {
                kind: AttackKind::Constant { vector: compression::restrict(vector, set)? },
                ..attack.clone()
            })
        }
        _ => Ok(attack.clone()),
    }
}

/// Runs the configured loop from `x⁰ = 0` for `cfg.iterations` rounds.
pub fn run_training(
    cfg: &TrainConfig,
    objective: &ObjectiveSpec,
    worlds: &[LocalDataset],
    attack: &AttackSpec,
    master_seed: u64,
) -> core::result::Result<TrainOutcome, TrainAbort> {
    attack.validate()?;
    let meta = prepare_meta(cfg, objective, worlds, master_seed)?;
    let dim = worlds[0].dim();
    let workers = worlds.len();
    let mut out = TrainOutcome { trajectory: Vec::with_capacity(cfg.iterations + 1), metrics: Vec::new(), meta };
    out.trajectory.push(model::project(&alloc::vec![0.0; dim], &cfg.domain));
    out.meta.filter.columns = workers;
    out.meta.filter.min_support = rge::saddle::min_support(rge::weight_cap(1.0 - out.meta.eps_tilde, workers));

    for t in 0..cfg.iterations {
        match step(cfg, objective, worlds, attack, master_seed, t as u64, &mut out) {
            Ok(()) => {}
            Err(error) => return Err(TrainAbort { error, partial: Some(alloc::boxed::Box::new(out)) }),
        }
    }
    if out.meta.filter.calls == 0 {
        out.meta.filter.min_active = 0;
    }
    Ok(out)
}

fn step(
    cfg: &TrainConfig,
    objective: &ObjectiveSpec,
    worlds: &[LocalDataset],
    attack: &AttackSpec,
    master_seed: u64,
    t: u64,
    out: &mut TrainOutcome,
) -> Result<()> {
    let x = out.trajectory.last().expect("trajectory starts with x0").clone();
    let workers = worlds.len();
    let msgs = honest_messages(cfg, objective, worlds, &x, master_seed, t)?;
    let honest = GradientMatrix::from_columns(&msgs.columns)?;
    let corrupt = attacks::choose_corrupt_set(master_seed, t, workers, attack);
    let honest_idx: Vec<usize> = (0..workers).filter(|i| corrupt.binary_search(i).is_err()).collect();
    let honest_mean = honest.mean_of(&honest_idx);
    let round_attack = attack_for_round(attack, msgs.coords.as_ref())?;
    let mut adv_rng = seed::stream(master_seed, StreamTag::Adversary, t, 1);
    let ctx = AttackContext { round: t, honest_mean: &honest_mean };
    let received = attacks::apply_attack(&mut adv_rng, &round_attack, &honest, &corrupt, &ctx)?;

    let (ghat, report) = rge::estimate(&received, out.meta.sigma0_sq, out.meta.eps_tilde)?;
    let stats = &mut out.meta.filter;
    stats.calls += 1;
    stats.saddle_nonconverged += usize::from(!report.converged);
    stats.invariant_violations += usize::from(rge::check_report_invariants(&report, workers).is_err());
    stats.max_rounds = stats.max_rounds.max(report.rounds);
    stats.min_active = stats.min_active.min(report.active_indices.len());

    let est_error = linalg::dist(&ghat, &honest_mean);
    let full_step = match &msgs.coords {
        Some(set) => compression::embed(&ghat, set)?,
        None => ghat,
    };
    let mut next = x.0.clone();
    linalg::axpy(-out.meta.eta, &full_step, &mut next);
    let next = model::project(&next, &cfg.domain);
    if !next.is_finite() {
        return Err(Error::InvalidParameter(format!("iterate diverged at round {}", t + 1)));
    }

    let dist_sq_to_opt = match (objective.kind, &out.meta.reference_point) {
        (ObjectiveKind::StronglyConvexQuadratic, Some(opt)) => linalg::dist_sq(&next, opt),
        _ => f64::NAN,
    };
    let grad_norm_sq = linalg::norm_sq(&model::global_gradient(objective, worlds, &next)?);
    let honest_removed = report.removed_indices.iter().filter(|i| corrupt.binary_search(i).is_err()).count();
    out.metrics.push(MetricsRow {
        round: t as usize + 1,
        dist_sq_to_opt,
        grad_norm_sq,
        est_error,
        active_count: report.active_indices.len(),
        honest_removed,
        filter_rounds: report.rounds,
        sum_c_tau_final: report.final_phi(),
    });
    out.trajectory.push(next);
    Ok(())
}
