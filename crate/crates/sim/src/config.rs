//! TOML run configuration.
//!
//! A file has one table per concern. Only the tables needed by the chosen
//! subcommand are required:
//!
//! ```toml
//! [experiment]
//! name = "floor-vs-batch"
//! out = "runs/floor"            # overridden by --out
//!
//! [data]                        # train
//! dim = 5
//! workers = 20
//! samples_per_worker = 128
//! noise_std = 1.0
//! shift_radius = 1.0
//! # feature_cov_diag = [...]    # or feature_cov = [... row-major ...]
//! # identical_workers = true
//! # dataset_dir = "data/"       # load worker_<r>.csv instead of generating
//!
//! [objective]                   # train
//! kind = "strongly-convex-quadratic"   # or "smooth-nonconvex"
//! reg_weight = 0.0
//!
//! [train]                       # train
//! iterations = 300
//! mode = "sgd"                  # sgd | full_gd | compressed_sgd
//! batch = 16
//! eps = 0.2
//! eps_prime = 0.05
//! lr_rule = "strongly_convex"   # strongly_convex | nonconvex | manual (with lr = ...)
//!
//! [attack]
//! kind = "omniscient_shift"     # none | gaussian_noise | sign_flip | constant | omniscient_shift
//! scale = 1e4
//! mobile = false
//!
//! [seeds]
//! master = 1
//! replicates = 10
//! ```
//!
//! The diagnostic subcommands read `[rge_bench]`, `[compress_check]`,
//! `[kappa_scan]` and `[concentration]`; every field there has a default.

use std::path::{Path, PathBuf};

use byzsgd_core::attacks::{AttackKind, AttackSpec};
use byzsgd_core::datagen::HeteroModelSpec;
use byzsgd_core::model::{DomainSpec, ObjectiveKind, ObjectiveSpec};
use byzsgd_core::rge::UPSILON_CONST;
use byzsgd_core::trainer::{LrRule, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub objective: ObjectiveSection,
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub rge_bench: RgeBenchSection,
    #[serde(default)]
    pub compress_check: CompressCheckSection,
    #[serde(default)]
    pub kappa_scan: KappaScanSection,
    #[serde(default)]
    pub concentration: ConcentrationSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub name: String,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dim: usize,
    pub workers: usize,
    pub samples_per_worker: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub shift_radius: f64,
    pub feature_cov: Option<Vec<f64>>,
    pub feature_cov_diag: Option<Vec<f64>>,
    pub base_param: Option<Vec<f64>>,
    #[serde(default)]
    pub identical_workers: bool,
    pub dataset_dir: Option<PathBuf>,
}

impl DataSection {
    pub fn model_spec(&self) -> Result<HeteroModelSpec, SimError> {
        let feature_cov = match (&self.feature_cov, &self.feature_cov_diag) {
            (Some(_), Some(_)) => return Err(SimError::config("give feature_cov or feature_cov_diag, not both")),
            (Some(c), None) => Some(c.clone()),
            (None, Some(diag)) => {
                if diag.len() != self.dim {
                    return Err(SimError::config(format!("feature_cov_diag needs {} entries", self.dim)));
                }
                let mut c = vec![0.0; self.dim * self.dim];
                for (i, v) in diag.iter().enumerate() {
                    c[i * self.dim + i] = *v;
                }
                Some(c)
            }
            (None, None) => None,
        };
        let spec = HeteroModelSpec {
            dim: self.dim,
            workers: self.workers,
            samples_per_worker: self.samples_per_worker,
            feature_cov,
            noise_std: self.noise_std,
            shift_radius: self.shift_radius,
            base_param: self.base_param.clone(),
            identical_workers: self.identical_workers,
        };
        spec.validate().map_err(SimError::from_config)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub reg_weight: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { kind: ObjectiveKind::StronglyConvexQuadratic, reg_weight: 0.0 }
    }
}

impl ObjectiveSection {
    pub fn spec(&self) -> ObjectiveSpec {
        ObjectiveSpec { kind: self.kind, reg_weight: self.reg_weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrRuleName {
    StronglyConvex,
    Nonconvex,
    Manual,
}

fn default_true() -> bool {
    true
}

fn default_upsilon() -> f64 {
    UPSILON_CONST
}

fn default_eps_prime() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub mode: TrainMode,
    #[serde(default = "one")]
    pub batch: usize,
    pub coords: Option<usize>,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_eps_prime")]
    pub eps_prime: f64,
    pub lr_rule: LrRuleName,
    pub lr: Option<f64>,
    pub domain_radius: Option<f64>,
    pub sigma0_override: Option<f64>,
    #[serde(default = "default_true")]
    pub shared_coords: bool,
    #[serde(default = "default_upsilon")]
    pub upsilon_const: f64,
}

fn one() -> usize {
    1
}

impl TrainSection {
    pub fn train_config(&self) -> Result<TrainConfig, SimError> {
        let lr_rule = match (self.lr_rule, self.lr) {
            (LrRuleName::Manual, Some(eta)) => LrRule::Manual(eta),
            (LrRuleName::Manual, None) => return Err(SimError::config("lr_rule = \"manual\" needs lr")),
            (_, Some(_)) => return Err(SimError::config("lr is only valid with lr_rule = \"manual\"")),
            (LrRuleName::StronglyConvex, None) => LrRule::StronglyConvex,
            (LrRuleName::Nonconvex, None) => LrRule::Nonconvex,
        };
        let domain = match self.domain_radius {
            Some(r) => DomainSpec::ball(r),
            None => DomainSpec::unbounded(),
        };
        domain.validate().map_err(SimError::from_config)?;
        Ok(TrainConfig {
            iterations: self.iterations,
            mode: self.mode,
            batch: self.batch,
            coords: self.coords,
            eps: self.eps,
            eps_prime: self.eps_prime,
            lr_rule,
            domain,
            sigma0_override: self.sigma0_override,
            shared_coords: self.shared_coords,
            upsilon_const: self.upsilon_const,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackName {
    #[default]
    None,
    GaussianNoise,
    SignFlip,
    Constant,
    OmniscientShift,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default)]
    pub kind: AttackName,
    #[serde(default)]
    pub scale: Option<f64>,
    pub vector: Option<Vec<f64>>,
    #[serde(default)]
    pub mobile: bool,
    /// Defaults to `train.eps`.
    pub eps: Option<f64>,
}

impl AttackSection {
    pub fn spec(&self, default_eps: f64) -> Result<AttackSpec, SimError> {
        let scale = || self.scale.ok_or_else(|| SimError::config("attack needs scale"));
        let kind = match self.kind {
            AttackName::None => AttackKind::None,
            AttackName::GaussianNoise => AttackKind::GaussianNoise { scale: scale()? },
            AttackName::SignFlip => AttackKind::SignFlip { scale: self.scale.unwrap_or(1.0) },
            AttackName::OmniscientShift => AttackKind::OmniscientShift { scale: scale()? },
            AttackName::Constant => AttackKind::Constant {
                vector: self.vector.clone().ok_or_else(|| SimError::config("constant attack needs vector"))?,
            },
        };
        let eps = match self.kind {
            AttackName::None => self.eps.unwrap_or(0.0),
            _ => self.eps.unwrap_or(default_eps),
        };
        let spec = AttackSpec { kind, mobile: self.mobile, eps };
        spec.validate().map_err(SimError::from_config)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    #[serde(default)]
    pub master: u64,
    #[serde(default = "one")]
    pub replicates: usize,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { master: 0, replicates: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgeBenchSection {
    pub workers: usize,
    pub dim: usize,
    pub sigma0: f64,
    pub eps_values: Vec<f64>,
    /// Outlier distance in units of `sigma0`.
    pub distance: f64,
    pub outliers: Vec<byzsgd_core::datagen::PlantedOutliers>,
    pub seeds: usize,
}

impl Default for RgeBenchSection {
    fn default() -> Self {
        use byzsgd_core::datagen::PlantedOutliers;
        Self {
            workers: 50,
            dim: 20,
            sigma0: 1.0,
            eps_values: vec![0.1, 0.2, 0.25],
            distance: 50.0,
            outliers: vec![PlantedOutliers::Shift, PlantedOutliers::SignFlip],
            seeds: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressCheckSection {
    pub dim: usize,
    /// The centered second moment sits `‖∇F_r‖²` below the bound, roughly a
    /// `k/(d·samples)` fraction, so few samples keep that gap above Monte-Carlo noise.
    pub coords: usize,
    pub samples: usize,
    pub batch: usize,
    pub draws: usize,
    pub noise_std: f64,
}

impl Default for CompressCheckSection {
    fn default() -> Self {
        Self { dim: 100, coords: 10, samples: 4, batch: 1, draws: 100_000, noise_std: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KappaScanSection {
    pub dim: usize,
    pub workers: usize,
    pub sizes: Vec<usize>,
    pub noise_std: f64,
    pub shift_radius: f64,
    /// Probes are drawn from the ball of this radius around the origin.
    pub probe_radius: f64,
    pub seeds: usize,
}

impl Default for KappaScanSection {
    fn default() -> Self {
        Self {
            dim: 10,
            workers: 8,
            sizes: vec![32, 64, 128, 256, 512, 1024, 2048, 4096],
            noise_std: 1.0,
            shift_radius: 1.0,
            probe_radius: 2.0,
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationSection {
    pub points: usize,
    pub dim: usize,
    pub eps_prime: f64,
    /// Per-point standard deviations are drawn from `[sigma_min, sigma_max]`.
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub seeds: usize,
}

impl Default for ConcentrationSection {
    fn default() -> Self {
        Self { points: 10, dim: 2, eps_prime: 0.2, sigma_min: 0.5, sigma_max: 1.0, seeds: 50 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn data(&self) -> Result<&DataSection, SimError> {
        self.data.as_ref().ok_or_else(|| SimError::config("missing [data] section"))
    }

    pub fn train(&self) -> Result<&TrainSection, SimError> {
        self.train.as_ref().ok_or_else(|| SimError::config("missing [train] section"))
    }

    pub fn attack_spec(&self) -> Result<AttackSpec, SimError> {
        let eps = self.train.as_ref().map(|t| t.eps).unwrap_or(0.0);
        self.attack.spec(eps)
    }
}
