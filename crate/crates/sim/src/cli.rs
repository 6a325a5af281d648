//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::{experiments, SimError};

#[derive(Debug, Parser)]
#[command(name = "byzsgd", version, about = "Byzantine-resilient distributed SGD simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding `seeds.master`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `experiment.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replicate count, overriding `seeds.replicates`.
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Worker threads for replicates (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Train with the robust estimator and write metrics and a summary.
    Train,
    /// Benchmark the estimator on planted outliers.
    RgeBench,
    /// Enumerate subsets for the small-scale concentration diagnostic.
    ConcentrationCheck,
    /// Check rand-k unbiasedness and variance.
    CompressCheck,
    /// Sweep the per-worker sample size and track the dissimilarity estimate.
    KappaScan,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::RgeBench => "rge-bench",
            Self::ConcentrationCheck => "concentration-check",
            Self::CompressCheck => "compress-check",
            Self::KappaScan => "kappa-scan",
        }
    }
}

fn load_config(path: Option<&Path>, command: Command) -> Result<RunConfig, SimError> {
    match (path, command) {
        (Some(p), _) => RunConfig::load(p),
        (None, Command::Train) => Err(SimError::config("train needs --config")),
        (None, _) => Ok(RunConfig::default()),
    }
}

fn output_dir(global: &GlobalArgs, cfg: &RunConfig, command: Command) -> PathBuf {
    if let Some(o) = &global.out {
        return o.clone();
    }
    if let Some(o) = &cfg.experiment.out {
        return o.clone();
    }
    let name = if cfg.experiment.name.is_empty() { command.name() } else { cfg.experiment.name.as_str() };
    PathBuf::from("runs").join(name)
}

/// Runs a parsed command and returns a one-line report.
pub fn run(cli: &Cli) -> Result<String, SimError> {
    let cfg = load_config(cli.global.config.as_deref(), cli.command)?;
    let master = cli.global.seed.unwrap_or(cfg.seeds.master);
    let out = output_dir(&cli.global, &cfg, cli.command);
    match cli.command {
        Command::Train => {
            let replicates = cli.global.replicates.unwrap_or(cfg.seeds.replicates);
            if replicates == 0 {
                return Err(SimError::config("replicates must be at least 1"));
            }
            let s = experiments::train(&cfg, master, replicates, cli.global.threads, &out)?;
            Ok(format!(
                "train: {} replicate(s), mean final dist_sq {:e}, mean final grad_norm_sq {:e}, output {}",
                s.replicates,
                s.mean_final_dist_sq,
                s.mean_final_grad_norm_sq,
                out.display()
            ))
        }
        Command::RgeBench => {
            let r = experiments::rge_bench(&cfg, master, &out)?;
            let mut lines = vec![format!("rge-bench: all within bound = {}", r.all_within_bound)];
            for s in &r.summaries {
                lines.push(format!(
                    "  {:?} eps={}: {}/{} within {:.3}, median error {:.4}, median naive {:.4}",
                    s.outliers, s.eps_tilde, s.within_bound, s.runs, s.bound, s.median_error, s.median_naive_error
                ));
            }
            Ok(lines.join("\n"))
        }
        Command::ConcentrationCheck => {
            let r = experiments::concentration_check(&cfg, master, &out)?;
            Ok(format!(
                "concentration-check: holds in all {} seeds = {}, max ratio {:.4}",
                r.seeds, r.holds_in_all, r.max_ratio
            ))
        }
        Command::CompressCheck => {
            let r = experiments::compress_check(&cfg, master, &out)?;
            let mc = &r.monte_carlo;
            Ok(format!(
                "compress-check: max z {:.3} over {} draws, variance {:.4} (se {:.4}), bound {:.4}",
                mc.max_z, mc.draws, mc.variance, mc.variance_se, mc.variance_bound
            ))
        }
        Command::KappaScan => {
            let r = experiments::kappa_scan(&cfg, master, &out)?;
            Ok(format!("kappa-scan: log-log slope {:.4}", r.slope))
        }
    }
}

/// Parses `args` (program name first) and runs. Returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(report) => {
            println!("{report}");
            0
        }
        Err(e) => {
            eprintln!("byzsgd: {e}");
            e.exit_code()
        }
    }
}
