//! Config-driven experiments: TOML parsing, problem assembly, runs, sweeps,
//! artifact I/O and post-hoc verification of a run directory.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diagnostics::{convergence_report, corollary_check};
use crate::error::{Error, Result};
use crate::functionals::{
    nn_l2_loss, zero_functional, Activation, Functional, InteractionEnergy,
    LinearPotential, NnDataset,
};
use crate::gibbs::{reference_measure, PotentialSpec};
use crate::measures::{Axis, DiscreteMeasure, GridSpec};
use crate::schemes::{self, rate_bound, RunRecord, RunRow, SchemeConfig, SchemeKind};

/// Density ratio between π's mode and the default domain boundary.
const DEFAULT_TAIL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub scheme: SchemeConfig,
    pub initial: InitialMeasure,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub minimizer: MinimizerConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub grid: GridConfig,
    pub potential: PotentialConfig,
    pub functional: FunctionalConfig,
}

/// A line (`dim = 1`) or square (`dim = 2`) tensor grid. Missing bounds
/// default to a box around the potential's center where π's density has
/// dropped below 1e−12 of its maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub nodes: usize,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// `α|x − c|²/2`
    Quadratic {
        alpha: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `α|x|²/2 + γ|x|⁴/4`, still α-strongly convex.
    Quartic { alpha: f64, gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Zero,
    LinearTanh {
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
    Affine {
        slope: Vec<f64>,
    },
    InteractionGaussian {
        amplitude: f64,
        bandwidth: f64,
    },
    /// Rows `[y, z_1, ..., z_p]` inline, or a CSV file relative to the config.
    NnL2 {
        #[serde(default)]
        samples: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        data: Option<PathBuf>,
        #[serde(default = "default_clip")]
        clip: f64,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
}

fn default_clip() -> f64 {
    4.0
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMeasure {
    Gaussian { mean: Vec<f64>, variance: f64 },
    Uniform,
    /// π itself.
    Reference,
    /// Weights from a `write_csv` file relative to the config.
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Any of `metrics_csv`, `summary_json`, `final_measure_csv`, `steps_csv`.
    pub formats: Vec<String>,
}

pub const FORMATS: [&str; 4] = ["metrics_csv", "summary_json", "final_measure_csv", "steps_csv"];

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: FORMATS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Settings for the reference minimizer μ*.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizerConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-15,
            max_iters: 20_000,
            damping: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Allowed excess of a per-step gap ratio over κ⁻¹.
    pub ratio_tolerance: f64,
    /// Bound on the run-averaged Fisher/W² residual.
    pub fisher_tolerance: f64,
    pub corollary_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            ratio_tolerance: 0.05,
            fisher_tolerance: 0.10,
            corollary_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Tau,
    Sigma,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(Self::Tau),
            "sigma" => Ok(Self::Sigma),
            other => Err(Error::Config(format!("sweep parameter must be tau or sigma, got '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::Sigma => "sigma",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl ExperimentConfig {
    /// Parses TOML; errors carry the line, column and key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<()> {
        let g = &self.problem.grid;
        if !(g.dim == 1 || g.dim == 2) {
            return Err(Error::Config(format!("problem.grid.dim must be 1 or 2, got {}", g.dim)));
        }
        if g.nodes < 2 {
            return Err(Error::Config("problem.grid.nodes must be at least 2".into()));
        }
        if g.lower.is_some() != g.upper.is_some() {
            return Err(Error::Config("problem.grid needs both lower and upper, or neither".into()));
        }
        for f in &self.outputs.formats {
            if !FORMATS.contains(&f.as_str()) {
                return Err(Error::Config(format!(
                    "outputs.formats: unknown format '{f}' (expected one of {FORMATS:?})"
                )));
            }
        }
        if let FunctionalConfig::NnL2 { samples, data, .. } = &self.problem.functional {
            if samples.is_some() == data.is_some() {
                return Err(Error::Config(
                    "problem.functional: nn_l2 needs exactly one of samples or data".into(),
                ));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep.values is empty".into()));
            }
        }
        Ok(())
    }

    pub fn wants(&self, format: &str) -> bool {
        self.outputs.formats.iter().any(|f| f == format)
    }

    pub fn with_parameter(&self, p: SweepParameter, value: f64) -> Self {
        let mut c = self.clone();
        match p {
            SweepParameter::Tau => c.scheme.tau = value,
            SweepParameter::Sigma => c.scheme.sigma = value,
        }
        c
    }
}

/// Assembled problem: grid, potential, functional, π, μ⁰ and μ*.
#[derive(Debug)]
pub struct Problem {
    pub grid: Arc<GridSpec>,
    pub potential: PotentialSpec,
    pub functional: Box<dyn Functional>,
    pub pi: DiscreteMeasure,
    pub mu0: DiscreteMeasure,
}

impl PotentialConfig {
    pub fn build(&self) -> Result<PotentialSpec> {
        match self {
            Self::Quadratic { alpha, center } => PotentialSpec::quadratic(*alpha, center.clone()),
            Self::Quartic { alpha, gamma } => {
                let (a, g) = (*alpha, *gamma);
                if g < 0.0 {
                    return Err(Error::Config("quartic potential needs gamma >= 0".into()));
                }
                PotentialSpec::new(
                    format!("quartic({a},{g})"),
                    move |x| {
                        let r2: f64 = x.iter().map(|v| v * v).sum();
                        0.5 * a * r2 + 0.25 * g * r2 * r2
                    },
                    move |x| {
                        let r2: f64 = x.iter().map(|v| v * v).sum();
                        x.iter().map(|v| (a + g * r2) * v).collect()
                    },
                    a,
                )
            }
        }
    }

    fn center(&self) -> f64 {
        match self {
            Self::Quadratic { center, .. } => center.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            Self::Quartic { .. } => 0.0,
        }
    }

    fn alpha(&self) -> f64 {
        match self {
            Self::Quadratic { alpha, .. } | Self::Quartic { alpha, .. } => *alpha,
        }
    }
}

impl GridConfig {
    pub fn build(&self, potential: &PotentialConfig) -> Result<GridSpec> {
        let (lo, hi) = match (self.lower, self.upper) {
            (Some(l), Some(h)) => (l, h),
            _ => {
                let r = (2.0 * (1.0 / DEFAULT_TAIL).ln() / potential.alpha()).sqrt() + potential.center();
                (-r, r)
            }
        };
        let axis = Axis {
            lower: lo,
            upper: hi,
            nodes: self.nodes,
        };
        GridSpec::new(vec![axis; self.dim])
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl FunctionalConfig {
    pub fn build(&self, dim: usize, base: &Path) -> Result<Box<dyn Functional>> {
        Ok(match self {
            Self::Zero => Box::new(zero_functional()),
            Self::LinearTanh { amplitude } => Box::new(LinearPotential::tanh(*amplitude)),
            Self::Constant { value } => Box::new(LinearPotential::constant(*value)),
            Self::Affine { slope } => {
                if slope.len() != dim {
                    return Err(Error::Config(format!(
                        "problem.functional.slope has {} entries for a {dim}-dimensional grid",
                        slope.len()
                    )));
                }
                Box::new(LinearPotential::affine(slope.clone()))
            }
            Self::InteractionGaussian { amplitude, bandwidth } => {
                Box::new(InteractionEnergy::gaussian(dim, *amplitude, *bandwidth)?)
            }
            Self::NnL2 {
                samples,
                data,
                clip,
                activation,
            } => {
                let ds = match (samples, data) {
                    (Some(rows), _) => {
                        let mut s = Vec::with_capacity(rows.len());
                        for (k, r) in rows.iter().enumerate() {
                            if r.len() < 2 {
                                return Err(Error::Config(format!(
                                    "problem.functional.samples[{k}] needs y and at least one feature"
                                )));
                            }
                            s.push((r[0], r[1..].to_vec()));
                        }
                        NnDataset::new(s, *clip, *activation)?
                    }
                    (None, Some(path)) => {
                        let path = resolve(base, path);
                        let file = fs::File::open(&path).map_err(|e| {
                            Error::Config(format!("cannot open dataset {}: {e}", path.display()))
                        })?;
                        NnDataset::from_csv(BufReader::new(file), *clip, *activation)?
                    }
                    (None, None) => unreachable!("checked at parse time"),
                };
                Box::new(nn_l2_loss(ds, dim)?)
            }
        })
    }
}

impl InitialMeasure {
    pub fn build(&self, grid: &Arc<GridSpec>, pi: &DiscreteMeasure, base: &Path) -> Result<DiscreteMeasure> {
        match self {
            Self::Gaussian { mean, variance } => {
                if mean.len() != grid.dim() {
                    return Err(Error::Config(format!(
                        "initial.mean has {} entries for a {}-dimensional grid",
                        mean.len(),
                        grid.dim()
                    )));
                }
                DiscreteMeasure::gaussian(grid.clone(), mean, *variance)
            }
            Self::Uniform => Ok(DiscreteMeasure::uniform(grid.clone())),
            Self::Reference => Ok(pi.clone()),
            Self::Csv { path } => {
                let path = resolve(base, path);
                let file = fs::File::open(&path)
                    .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
                DiscreteMeasure::read_csv(grid.clone(), BufReader::new(file))
            }
        }
    }
}

impl Problem {
    /// `base` resolves relative paths in the config.
    pub fn build(cfg: &ExperimentConfig, base: &Path) -> Result<Self> {
        let potential = cfg.problem.potential.build()?;
        let grid = Arc::new(cfg.problem.grid.build(&cfg.problem.potential)?);
        potential.validate(&grid, 64, cfg.seed)?;
        let functional = cfg.problem.functional.build(grid.dim(), base)?;
        let pi = reference_measure(&potential, &grid)?;
        let mu0 = cfg.initial.build(&grid, &pi, base)?;
        Ok(Self {
            grid,
            potential,
            functional,
            pi,
            mu0,
        })
    }

    pub fn minimizer(&self, sigma: f64, m: &MinimizerConfig) -> Result<DiscreteMeasure> {
        schemes::solve_minimizer(
            self.functional.as_ref(),
            sigma,
            &self.potential,
            &self.grid,
            m.tol,
            m.max_iters,
            m.damping,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    fn new(name: &str, ok: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        }
    }

    fn skip(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::NotApplicable,
            detail: detail.into(),
        }
    }
}

/// Diagnostics of a metric stream against the theory for its scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub kappa: Option<f64>,
    pub kappa_inv: Option<f64>,
    pub fitted_rate: Option<f64>,
    pub max_ratio: Option<f64>,
    pub rate_violations: usize,
    pub gap_increases: usize,
    pub sandwich_violations: usize,
    pub corollary_kl_violations: usize,
    pub corollary_w2_violations: usize,
    pub fisher_residual_mean: Option<f64>,
    pub fisher_residual_max: Option<f64>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Assessment {
    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Everything the checks need besides the rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub kind: SchemeKind,
    pub tau: f64,
    pub sigma: f64,
    pub outer_tol: f64,
    pub alpha_u: f64,
    #[serde(with = "lenient")]
    pub c_f: f64,
    #[serde(with = "lenient")]
    pub l_f_prime: f64,
}

/// JSON has no infinities; non-finite reals are written as strings.
mod lenient {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Num {
            F(f64),
            S(String),
        }
        match Num::deserialize(d)? {
            Num::F(v) => Ok(v),
            Num::S(s) => s.parse().map_err(D::Error::custom),
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// `fw` holds the per-step Fisher/W² residuals, if known.
pub fn assess(rows: &[RunRow], fw: Option<&[f64]>, ctx: &RunContext, tol: &VerifyConfig) -> Assessment {
    let mut a = Assessment {
        kappa: None,
        kappa_inv: None,
        fitted_rate: None,
        max_ratio: None,
        rate_violations: 0,
        gap_increases: 0,
        sandwich_violations: 0,
        corollary_kl_violations: 0,
        corollary_w2_violations: 0,
        fisher_residual_mean: None,
        fisher_residual_max: None,
        checks: Vec::new(),
        warnings: Vec::new(),
    };
    let bad = rows.iter().filter(|r| !r.inner_converged).count();
    a.checks.push(Check::new(
        "inner_converged",
        bad == 0,
        format!("{bad} of {} rows flagged as not converged", rows.len()),
    ));
    if ctx.kind == SchemeKind::ExplicitEulerDemo {
        a.warnings
            .push("explicit_euler_demo has no convergence theory; rate, sandwich, corollary and Fisher checks skipped".into());
        for name in ["monotone_gap", "rate", "sandwich", "corollary", "fisher_wasserstein"] {
            a.checks.push(Check::skip(name, "not applicable to explicit_euler_demo"));
        }
        return a;
    }
    let kappa = rate_bound(ctx.kind, ctx.tau, ctx.sigma, ctx.alpha_u, ctx.c_f, ctx.l_f_prime);
    let kappa = match kappa {
        Ok(k) => Some(k),
        Err(e) => {
            a.warnings.push(format!("no theoretical rate: {e}"));
            None
        }
    };
    a.kappa = kappa;
    a.kappa_inv = kappa.map(|k| 1.0 / k);
    match convergence_report(rows, ctx.sigma, ctx.outer_tol, kappa.unwrap_or(f64::NAN), tol.ratio_tolerance) {
        Ok(rep) => {
            a.fitted_rate = finite(rep.fitted_rate);
            a.max_ratio = rep.ratios.iter().copied().reduce(f64::max);
            a.gap_increases = rep.increases;
            a.checks.push(Check::new(
                "monotone_gap",
                rep.increases == 0,
                format!("{} of {} steps did not decrease the gap", rep.increases, rep.ratios.len()),
            ));
            if kappa.is_some() {
                a.rate_violations = rep.violations;
                let worst = rep
                    .ratios
                    .iter()
                    .zip(&rep.ratio_rows)
                    .fold((f64::NEG_INFINITY, 0), |m, (&r, &n)| if r > m.0 { (r, n) } else { m });
                a.checks.push(Check::new(
                    "rate",
                    rep.violations == 0,
                    format!(
                        "{} ratios above 1/kappa + {} = {:.6}; worst {:.6} at n = {}",
                        rep.violations,
                        tol.ratio_tolerance,
                        rep.kappa_inv + tol.ratio_tolerance,
                        worst.0,
                        worst.1
                    ),
                ));
            } else {
                a.checks.push(Check::skip("rate", "theoretical rate unavailable"));
            }
        }
        Err(e) => {
            a.checks.push(Check::skip("monotone_gap", format!("{e}")));
            a.checks.push(Check::skip("rate", format!("{e}")));
        }
    }
    a.sandwich_violations = rows
        .iter()
        .filter(|r| {
            !crate::diagnostics::Sandwich {
                lower: ctx.sigma * r.kl_to_opt,
                mid: r.gap,
                upper: ctx.sigma * r.kl_to_gibbs,
            }
            .holds()
        })
        .count();
    a.checks.push(Check::new(
        "sandwich",
        a.sandwich_violations == 0,
        format!("{} of {} rows violate the sandwich", a.sandwich_violations, rows.len()),
    ));
    match kappa.map(|k| corollary_check(rows, k, ctx.sigma, ctx.alpha_u, ctx.c_f, tol.corollary_tolerance)) {
        Some(Ok(rep)) => {
            a.corollary_kl_violations = rep.kl_violations;
            a.corollary_w2_violations = rep.w2_violations;
            a.checks.push(Check::new(
                "corollary",
                rep.kl_violations + rep.w2_violations == 0,
                format!(
                    "KL bound violated {} times (worst excess {:.3e}), W2 bound violated {} times (worst excess {:.3e})",
                    rep.kl_violations, rep.kl_worst_excess, rep.w2_violations, rep.w2_worst_excess
                ),
            ));
        }
        Some(Err(e)) => a.checks.push(Check::skip("corollary", e.to_string())),
        None => a.checks.push(Check::skip("corollary", "theoretical rate unavailable")),
    }
    let usable: Vec<f64> = fw.unwrap_or(&[]).iter().copied().filter(|v| v.is_finite()).collect();
    if usable.is_empty() {
        a.checks.push(Check::skip("fisher_wasserstein", "no per-step residuals available"));
    } else {
        let mean = usable.iter().sum::<f64>() / usable.len() as f64;
        let max = usable.iter().copied().fold(0.0, f64::max);
        a.fisher_residual_mean = Some(mean);
        a.fisher_residual_max = Some(max);
        a.checks.push(Check::new(
            "fisher_wasserstein",
            mean <= tol.fisher_tolerance,
            format!("mean residual {mean:.3e}, max {max:.3e}, tolerance {}", tol.fisher_tolerance),
        ));
    }
    a
}

/// `summary.json` contents.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub context: RunContext,
    pub steps: usize,
    pub final_gap: f64,
    pub failure: Option<String>,
    pub wall_time: f64,
    pub warnings: Vec<String>,
    pub assessment: Assessment,
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub summary: Summary,
}

impl RunOutcome {
    pub fn inner_failure(&self) -> bool {
        self.record.failure.is_some()
    }
}

/// Builds the problem, solves for μ* and runs the scheme. Writes nothing.
pub fn execute(cfg: &ExperimentConfig, base: &Path) -> Result<RunOutcome> {
    let problem = Problem::build(cfg, base)?;
    let f = problem.functional.as_ref();
    let mu_star = problem.minimizer(cfg.scheme.sigma, &cfg.minimizer)?;
    let record = schemes::run(f, &problem.mu0, &cfg.scheme, &problem.potential, &mu_star)?;
    let ctx = RunContext {
        kind: cfg.scheme.kind,
        tau: cfg.scheme.tau,
        sigma: cfg.scheme.sigma,
        outer_tol: cfg.scheme.outer_tol,
        alpha_u: problem.potential.alpha_u(),
        c_f: f.constants().c_f,
        l_f_prime: f.constants().l_f_prime,
    };
    let fw: Vec<f64> = record.steps.iter().map(|s| s.fw_residual).collect();
    let assessment = assess(&record.rows, Some(&fw), &ctx, &cfg.verify);
    let mut warnings = record.warnings.clone();
    warnings.extend(assessment.warnings.iter().cloned());
    let summary = Summary {
        config: cfg.clone(),
        context: ctx,
        steps: record.rows.len() - 1,
        final_gap: record.rows.last().map_or(f64::NAN, |r| r.gap),
        failure: record.failure.clone(),
        wall_time: record.wall_time,
        warnings,
        assessment,
    };
    Ok(RunOutcome { record, summary })
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reals at 17 significant digits so values round-trip exactly.
fn real(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

pub fn metrics_csv(rows: &[RunRow]) -> String {
    let mut s = RunRow::HEADER.join(",");
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},", r.n);
        for v in [r.f_sigma, r.gap, r.kl_to_opt, r.w2sq_to_opt, r.kl_to_gibbs, r.fisher_to_gibbs] {
            real(&mut s, v);
            s.push(',');
        }
        let _ = writeln!(s, "{},{}", r.inner_iters, r.inner_converged);
    }
    s
}

fn parse_err(what: &str, line: usize, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{what} line {line}: {e}"))
}

pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<RunRow>> {
    let mut rows = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if k == 0 {
            if line.trim() != RunRow::HEADER.join(",") {
                return Err(parse_err("metrics.csv", 1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != RunRow::HEADER.len() {
            return Err(parse_err("metrics.csv", k + 1, format!("expected {} fields", RunRow::HEADER.len())));
        }
        let real = |i: usize| f[i].parse::<f64>().map_err(|e| parse_err("metrics.csv", k + 1, e));
        rows.push(RunRow {
            n: f[0].parse().map_err(|e| parse_err("metrics.csv", k + 1, e))?,
            f_sigma: real(1)?,
            gap: real(2)?,
            kl_to_opt: real(3)?,
            w2sq_to_opt: real(4)?,
            kl_to_gibbs: real(5)?,
            fisher_to_gibbs: real(6)?,
            inner_iters: f[7].parse().map_err(|e| parse_err("metrics.csv", k + 1, e))?,
            inner_converged: f[8].parse().map_err(|e| parse_err("metrics.csv", k + 1, e))?,
        });
    }
    Ok(rows)
}

pub fn steps_csv(record: &RunRecord) -> String {
    let mut s = String::from("n,fw_residual,linearizations,clamped_mass\n");
    for (k, st) in record.steps.iter().enumerate() {
        let _ = write!(s, "{},", k + 1);
        real(&mut s, st.fw_residual);
        let _ = write!(s, ",{},", st.linearizations);
        real(&mut s, st.clamped_mass);
        s.push('\n');
    }
    s
}

fn read_fw_residuals<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = line
            .split(',')
            .nth(1)
            .ok_or_else(|| parse_err("steps.csv", k + 1, "missing fw_residual"))?;
        out.push(v.trim().parse().map_err(|e| parse_err("steps.csv", k + 1, e))?);
    }
    Ok(out)
}

/// Writes the configured artifacts of a finished run into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, out: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    if cfg.wants("metrics_csv") {
        write_atomic(&dir.join("metrics.csv"), metrics_csv(&out.record.rows).as_bytes())?;
    }
    if cfg.wants("steps_csv") {
        write_atomic(&dir.join("steps.csv"), steps_csv(&out.record).as_bytes())?;
    }
    if cfg.wants("final_measure_csv") {
        let mut buf = Vec::new();
        out.record.final_measure.write_csv(&mut buf)?;
        write_atomic(&dir.join("final_measure.csv"), &buf)?;
    }
    if cfg.wants("summary_json") {
        let text = serde_json::to_string_pretty(&out.summary)?;
        write_atomic(&dir.join("summary.json"), text.as_bytes())?;
    }
    Ok(())
}

/// `verify.json` contents.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub dir: PathBuf,
    pub rows: usize,
    pub passed: bool,
    pub failed: Vec<String>,
    pub assessment: Assessment,
}

fn read_file(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Config(format!("missing artifact {}: {e}", path.display())))
}

/// Re-reads `metrics.csv`, `summary.json` and (if present) `steps.csv` from
/// a run directory, reruns the diagnostics and writes `verify.json`.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let rows = read_metrics_csv(BufReader::new(read_file(&dir.join("metrics.csv"))?))?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: metrics.csv has no rows", dir.display())));
    }
    let summary: Value = serde_json::from_reader(BufReader::new(read_file(&dir.join("summary.json"))?))?;
    let ctx: RunContext = serde_json::from_value(summary["context"].clone())
        .map_err(|e| Error::Config(format!("summary.json context: {e}")))?;
    let tol: VerifyConfig = serde_json::from_value(summary["config"]["verify"].clone())
        .map_err(|e| Error::Config(format!("summary.json config.verify: {e}")))?;
    let steps_path = dir.join("steps.csv");
    let fw = if steps_path.exists() {
        Some(read_fw_residuals(BufReader::new(read_file(&steps_path)?))?)
    } else {
        None
    };
    let assessment = assess(&rows, fw.as_deref(), &ctx, &tol);
    for w in &assessment.warnings {
        warn!("{w}");
    }
    let failed: Vec<String> = assessment.failed().into_iter().map(String::from).collect();
    let report = VerifyReport {
        dir: dir.to_path_buf(),
        rows: rows.len(),
        passed: failed.is_empty(),
        failed,
        assessment,
    };
    write_atomic(&dir.join("verify.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStatus {
    Ok,
    InnerFailure,
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: PathBuf,
    pub status: SweepStatus,
    pub fitted_rate: Option<f64>,
    pub kappa: Option<f64>,
    pub kappa_inv: Option<f64>,
    pub final_gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub runs: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn successes(&self) -> usize {
        self.runs.iter().filter(|r| r.status == SweepStatus::Ok).count()
    }
}

/// One run per value, concurrently on the current rayon pool, each in
/// `out/<parameter>=<value>/`. Results keep the order of `values`.
pub fn sweep(cfg: &ExperimentConfig, base: &Path, out: &Path, p: SweepParameter, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    fs::create_dir_all(out)?;
    let runs: Vec<SweepEntry> = values
        .par_iter()
        .map(|&v| {
            let c = cfg.with_parameter(p, v);
            let dir = out.join(format!("{}={v}", p.name()));
            let mut entry = SweepEntry {
                value: v,
                dir: dir.clone(),
                status: SweepStatus::Error,
                fitted_rate: None,
                kappa: None,
                kappa_inv: None,
                final_gap: None,
                error: None,
            };
            match execute(&c, base).and_then(|o| write_artifacts(&dir, &c, &o).map(|_| o)) {
                Ok(o) => {
                    let a = &o.summary.assessment;
                    entry.status = if o.inner_failure() { SweepStatus::InnerFailure } else { SweepStatus::Ok };
                    entry.fitted_rate = a.fitted_rate;
                    entry.kappa = a.kappa;
                    entry.kappa_inv = a.kappa_inv;
                    entry.final_gap = finite(o.summary.final_gap);
                    entry.error = o.summary.failure.clone();
                    info!("{}={v}: fitted rate {:?}, kappa^-1 {:?}", p.name(), a.fitted_rate, a.kappa_inv);
                }
                Err(e) => {
                    warn!("{}={v}: {e}", p.name());
                    entry.error = Some(e.to_string());
                }
            }
            entry
        })
        .collect();
    let report = SweepReport { parameter: p, runs };
    write_atomic(&out.join("sweep.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

/// `oracle.json` contents: inner solvers against the brute-force oracle and
/// one JKO step against the closed-form Gaussian step.
#[derive(Clone, Debug, Serialize)]
pub struct OracleCheck {
    pub cross_validation: crate::oracles::CrossValidation,
    pub gaussian: Value,
    /// Failures that make the command exit with the verification code.
    pub failed: Vec<String>,
}

pub fn oracle_check(seed: u64, instances: usize) -> Result<OracleCheck> {
    use crate::jko::{jko_step, JkoConfig};
    use crate::oracles::{cross_validate, gaussian_jko_oracle_1d};
    let cv = cross_validate(seed, instances)?;
    let grid = Arc::new(GridSpec::line(-8.0, 8.0, 801)?);
    let u = PotentialSpec::quadratic(1.0, vec![0.0])?;
    let pi = reference_measure(&u, &grid)?;
    let mu0 = DiscreteMeasure::gaussian(grid, &[1.0], 1.0)?;
    let step = jko_step(&pi, &mu0, 1.0, 1.0, &JkoConfig::default())?;
    let (m, v) = gaussian_jko_oracle_1d(1.0, 1.0, 1.0, 1.0, 1.0)?;
    let (mm, mv) = (step.minimizer.mean()[0], step.minimizer.variance());
    let gaussian_ok = (mm - m).abs() <= 1e-3 && (mv - v).abs() <= 2e-3;
    let mut failed = Vec::new();
    if cv.newton_failures > 0 {
        failed.push(format!("newton solver: {} of {} instances off the oracle", cv.newton_failures, instances));
    }
    if cv.entropic_stationarity_failures > 0 {
        failed.push(format!(
            "entropic solver: {} of {} instances not stationary on the entropic objective",
            cv.entropic_stationarity_failures, instances
        ));
    }
    if !gaussian_ok {
        failed.push("gaussian step".into());
    }
    if cv.entropic_failures > 0 {
        warn!(
            "entropic solver differs from the cell-reading oracle on {} of {instances} instances (expected: it minimizes an entropic surrogate)",
            cv.entropic_failures
        );
    }
    Ok(OracleCheck {
        gaussian: json!({
            "mean": mm, "oracle_mean": m, "variance": mv, "oracle_variance": v, "passed": gaussian_ok
        }),
        cross_validation: cv,
        failed,
    })
}
