use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info, warn};

use wprox::experiment::{self, ExperimentConfig, SweepParameter};
use wprox::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "wprox", version, about = "Wasserstein proximal schemes on grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run,
    /// One run per parameter value; writes sweep.json.
    Sweep {
        /// `tau` or `sigma`; defaults to the config's [sweep] section.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Re-check a finished run directory (`--out`, else the config's output dir).
    Verify,
    /// Cross-check the inner solvers against the brute-force oracles.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence(_) | Error::InconsistentPlan(_) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf, PathBuf), Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = cli.out.clone().unwrap_or_else(|| cfg.outputs.dir.clone());
    Ok((cfg, base, out))
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Run => {
            let (cfg, base, out) = load(cli)?;
            let outcome = experiment::execute(&cfg, &base)?;
            experiment::write_artifacts(&out, &cfg, &outcome)?;
            let a = &outcome.summary.assessment;
            info!(
                "{} steps, final gap {:.3e}, fitted rate {:?}, 1/kappa {:?}",
                outcome.summary.steps, outcome.summary.final_gap, a.fitted_rate, a.kappa_inv
            );
            if let Some(f) = &outcome.record.failure {
                error!("inner solver failure: {f}");
                return Ok(EXIT_SOLVER);
            }
            Ok(0)
        }
        Command::Sweep { param, values } => {
            let (cfg, base, out) = load(cli)?;
            let p = match (param, &cfg.sweep) {
                (Some(p), _) => SweepParameter::parse(p)?,
                (None, Some(s)) => s.parameter,
                (None, None) => return Err(Error::Config("sweep needs --param or a [sweep] section".into())),
            };
            let values = match (values, &cfg.sweep) {
                (Some(v), _) => v.clone(),
                (None, Some(s)) => s.values.clone(),
                (None, None) => Vec::new(),
            };
            let report = experiment::sweep(&cfg, &base, &out, p, &values)?;
            if report.successes() == 0 {
                error!("every sweep run failed");
                return Ok(EXIT_SOLVER);
            }
            Ok(0)
        }
        Command::Verify => {
            let dir = match (&cli.out, &cli.config) {
                (Some(d), _) => d.clone(),
                (None, Some(_)) => load(cli)?.2,
                (None, None) => return Err(Error::Config("verify needs --out or --config".into())),
            };
            let report = experiment::verify(&dir)?;
            for c in &report.assessment.checks {
                info!("{}: {:?} ({})", c.name, c.status, c.detail);
            }
            if report.passed {
                Ok(0)
            } else {
                error!("verification failed: {}", report.failed.join(", "));
                Ok(EXIT_VERIFY)
            }
        }
        Command::OracleCheck { instances } => {
            let seed = match (&cli.config, cli.seed) {
                (_, Some(s)) => s,
                (Some(_), None) => load(cli)?.0.seed,
                (None, None) => 0,
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let report = experiment::oracle_check(seed, *instances)?;
            std::fs::create_dir_all(&out)?;
            experiment::write_atomic(&out.join("oracle.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
            if report.failed.is_empty() {
                Ok(0)
            } else {
                for f in &report.failed {
                    error!("oracle check failed: {f}");
                }
                Ok(EXIT_VERIFY)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WPROX_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
