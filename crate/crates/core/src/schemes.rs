//! Outer iterations: proximal point, prox-linear and proximal gradient, the
//! fixed-point solver for the minimizer μ*, the explicit Euler scheme kept
//! as a counterexample, and the theoretical rate κ of each scheme.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::diagnostics::fisher_wasserstein_residual;
use crate::error::{Error, Result};
use crate::functionals::{Functional, FunctionalConstants};
use crate::gibbs::{
    free_energy, grad_log_ratio, kl, proximal_gibbs, reference_measure, relative_fisher,
    PotentialSpec,
};
use crate::jko::{jko_solve, Anchor, JkoConfig, JkoResult, JkoSolver, WarmStart};
use crate::measures::{pushforward, DiscreteMeasure, GridSpec, PointMap};
use crate::transport::{w2sq_cells, w2sq_lp_capped, Quantile1d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    ProximalPoint,
    ProxLinear,
    ProximalGradient,
    ExplicitEulerDemo,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::ProximalPoint => "proximal_point",
            SchemeKind::ProxLinear => "prox_linear",
            SchemeKind::ProximalGradient => "proximal_gradient",
            SchemeKind::ExplicitEulerDemo => "explicit_euler_demo",
        }
    }
}

/// Re-linearization fixed point used by the implicit scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImplicitConfig {
    /// Stop once W²(z^{k+1}, z^k) ≤ tol².
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for ImplicitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 200,
            damping: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub tau: f64,
    pub sigma: f64,
    #[serde(default = "default_outer_iters")]
    pub max_outer_iters: usize,
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default, rename = "implicit_fixed_point")]
    pub implicit: ImplicitConfig,
    #[serde(default)]
    pub jko: JkoConfig,
    /// Required for `explicit_euler_demo`, which has no convergence theory.
    #[serde(default)]
    pub allow_demo: bool,
}

fn default_outer_iters() -> usize {
    50
}

fn default_outer_tol() -> f64 {
    1e-14
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, tau: f64, sigma: f64) -> Self {
        Self {
            kind,
            tau,
            sigma,
            max_outer_iters: default_outer_iters(),
            outer_tol: default_outer_tol(),
            implicit: ImplicitConfig::default(),
            jko: JkoConfig::default(),
            allow_demo: false,
        }
    }

    /// Checks parameters and the step-size condition of the scheme against
    /// the functional's constants.
    pub fn validate(&self, constants: &FunctionalConstants, alpha_u: f64) -> Result<()> {
        if !(self.tau > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau and sigma must be positive (got {}, {})",
                self.tau, self.sigma
            )));
        }
        if !(self.outer_tol >= 0.0) {
            return Err(Error::InvalidParameter("outer_tol must be nonnegative".into()));
        }
        let imp = &self.implicit;
        if !(imp.tol > 0.0) || imp.max_iters == 0 || !(imp.damping > 0.0 && imp.damping <= 1.0) {
            return Err(Error::InvalidParameter(
                "implicit fixed point needs tol > 0, max_iters > 0 and damping in (0, 1]".into(),
            ));
        }
        self.jko.validate()?;
        match self.kind {
            SchemeKind::ProximalGradient => {
                if self.tau * constants.l_f_prime >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "proximal gradient needs tau < 1/L_F' = {}",
                        1.0 / constants.l_f_prime
                    )));
                }
            }
            SchemeKind::ProxLinear => {
                if let Err(e) = rate_bound(
                    self.kind,
                    self.tau,
                    self.sigma,
                    alpha_u,
                    constants.c_f,
                    constants.l_f_prime,
                ) {
                    warn!("prox-linear step has no linear-rate guarantee: {e}");
                }
            }
            SchemeKind::ExplicitEulerDemo if !self.allow_demo => {
                return Err(Error::InvalidParameter(
                    "explicit_euler_demo is a counterexample; set allow_demo = true to run it".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Contraction factor κ with gap_{n+1} ≤ gap_n/κ for each scheme. Errors when the bound is
/// vacuous (κ ≤ 1), naming the term that fails to be positive.
pub fn rate_bound(
    kind: SchemeKind,
    tau: f64,
    sigma: f64,
    alpha_u: f64,
    c_f: f64,
    l_f_prime: f64,
) -> Result<f64> {
    if !(tau > 0.0 && sigma > 0.0 && alpha_u > 0.0 && c_f >= 0.0 && l_f_prime >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rate bound needs tau, sigma, alpha_U > 0 and C_F, L_F' >= 0 \
             (got {tau}, {sigma}, {alpha_u}, {c_f}, {l_f_prime})"
        )));
    }
    let base = tau * sigma * alpha_u * (-4.0 * c_f / sigma).exp();
    let tl = tau * l_f_prime;
    let (factor, what) = match kind {
        SchemeKind::ProximalPoint => (1.0, String::new()),
        SchemeKind::ProxLinear => (
            (1.0 - 2.0 * tl) / (1.0 + tl * tl),
            format!(
                "factor 1 - 2 tau L_F' = {} must be positive; the stated step condition \
                 tau < 2/L_F' does not ensure this, tau < 1/(2 L_F') = {} does",
                1.0 - 2.0 * tl,
                0.5 / l_f_prime
            ),
        ),
        SchemeKind::ProximalGradient => (
            (1.0 - tl) / (1.0 + 4.0 * tl * tl),
            format!("factor 1 - tau L_F' = {} must be positive", 1.0 - tl),
        ),
        SchemeKind::ExplicitEulerDemo => {
            return Err(Error::VacuousRate(
                "the explicit Euler scheme has no rate guarantee".into(),
            ))
        }
    };
    let gain = base * factor;
    if !(gain > 1e-15) {
        let why = if factor <= 0.0 {
            what
        } else {
            format!("tau sigma alpha_U e^(-4 C_F/sigma) = {base:e} vanishes")
        };
        return Err(Error::VacuousRate(why));
    }
    Ok(1.0 + gain)
}

/// W² in the geometry the schemes use: the cell reading in 1D and the exact
/// plan for 2D supports up to [`EXACT_2D_CAP`] nodes. `None` when neither
/// applies.
pub fn w2sq_model(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Option<f64>> {
    if a.dim() == 1 {
        return w2sq_cells(a, b).map(Some);
    }
    match w2sq_lp_capped(a, b, EXACT_2D_CAP) {
        Ok(plan) => Ok(Some(plan.cost())),
        Err(Error::SupportCap { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Largest 2D support handed to the exact solver inside run metrics.
pub const EXACT_2D_CAP: usize = 128;

/// W² when computable, otherwise the bound `diam²·TV`.
fn w2sq_or_bound(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if let Some(v) = w2sq_model(a, b)? {
        return Ok(v);
    }
    let diam2: f64 = a
        .grid()
        .axes()
        .iter()
        .map(|ax| (ax.upper - ax.lower).powi(2))
        .sum();
    Ok(diam2 * 0.5 * a.l1_distance(b))
}

/// Output of one outer step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub result: JkoResult,
    /// Reference and anchor of the last proximal problem solved.
    pub reference: DiscreteMeasure,
    pub anchor: Anchor,
    /// Inner problems solved (re-linearizations of the implicit step).
    pub linearizations: usize,
    pub clamped_mass: f64,
}

fn uses_quantile_anchor(cfg: &SchemeConfig, grid: &GridSpec) -> bool {
    grid.dim() == 1 && cfg.jko.solver_for(1) == JkoSolver::MirrorDescent
}

/// One prox-linear step: the proximal problem toward Φ[μⁿ] anchored at μⁿ.
pub fn prox_linear_step(
    f: &dyn Functional,
    mu_n: &DiscreteMeasure,
    cfg: &SchemeConfig,
    u: &PotentialSpec,
) -> Result<StepOutcome> {
    prox_linear_warm(f, mu_n, cfg, u, None)
}

fn prox_linear_warm(
    f: &dyn Functional,
    mu_n: &DiscreteMeasure,
    cfg: &SchemeConfig,
    u: &PotentialSpec,
    warm: Option<&WarmStart>,
) -> Result<StepOutcome> {
    let rho = proximal_gibbs(f, mu_n, cfg.sigma, u)?;
    let anchor = Anchor::Measure(mu_n.clone());
    let result = jko_solve(&rho, &anchor, cfg.tau, cfg.sigma, &cfg.jko, Some(mu_n), warm)?;
    Ok(StepOutcome {
        result,
        reference: rho,
        anchor,
        linearizations: 1,
        clamped_mass: 0.0,
    })
}

/// One implicit step, solved by damped re-linearization: with the anchor
/// fixed at μⁿ, `r_k` solves the proximal problem toward Φ[z_k], and
/// `z_{k+1} = (1 − β)z_k + β r_k` until `W²(r_k, z_k) ≤ tol²`. The returned
/// minimizer is the last `r_k`.
pub fn proximal_point_step(
    f: &dyn Functional,
    mu_n: &DiscreteMeasure,
    cfg: &SchemeConfig,
    u: &PotentialSpec,
) -> Result<StepOutcome> {
    proximal_point_warm(f, mu_n, cfg, u, None)
}

fn proximal_point_warm(
    f: &dyn Functional,
    mu_n: &DiscreteMeasure,
    cfg: &SchemeConfig,
    u: &PotentialSpec,
    warm: Option<&WarmStart>,
) -> Result<StepOutcome> {
    if f.is_linear() {
        return prox_linear_warm(f, mu_n, cfg, u, warm);
    }
    let imp = &cfg.implicit;
    let anchor = Anchor::Measure(mu_n.clone());
    let mut z = mu_n.clone();
    let mut init = mu_n.clone();
    let mut warm = warm.cloned();
    let mut inner_iters = 0;
    let mut inner_ok = true;
    let mut last_gap = f64::INFINITY;
    for k in 1..=imp.max_iters {
        let rho = proximal_gibbs(f, &z, cfg.sigma, u)?;
        let mut r = jko_solve(&rho, &anchor, cfg.tau, cfg.sigma, &cfg.jko, Some(&init), warm.as_ref())?;
        inner_iters += r.iterations;
        inner_ok &= r.converged;
        warm = r.warm.clone();
        last_gap = w2sq_or_bound(&r.minimizer, &z)?;
        if last_gap <= imp.tol * imp.tol {
            r.iterations = inner_iters;
            r.converged = inner_ok;
            return Ok(StepOutcome {
                result: r,
                reference: rho,
                anchor,
                linearizations: k,
                clamped_mass: 0.0,
            });
        }
        z = z.mix(&r.minimizer, imp.damping)?;
        init = r.minimizer;
    }
    warn!(
        "implicit step: re-linearization did not settle in {} iterations (W² gap {last_gap:.3e})",
        imp.max_iters
    );
    let rho = proximal_gibbs(f, &z, cfg.sigma, u)?;
    let mut r = jko_solve(&rho, &anchor, cfg.tau, cfg.sigma, &cfg.jko, Some(&init), warm.as_ref())?;
    r.iterations += inner_iters;
    r.converged = false;
    Ok(StepOutcome {
        result: r,
        reference: rho,
        anchor,
        linearizations: imp.max_iters + 1,
        clamped_mass: 0.0,
    })
}

/// One proximal gradient step: push μⁿ forward by `x ↦ x − τ∇_μF(μⁿ)(x)`,
/// then take the proximal step toward π anchored at the image. With the 1D
/// Newton solver the image is kept as a quantile function (no re-binning);
/// otherwise it is split onto the grid.
pub fn proximal_gradient_step(
    f: &dyn Functional,
    mu_n: &DiscreteMeasure,
    cfg: &SchemeConfig,
    u: &PotentialSpec,
) -> Result<StepOutcome> {
    proximal_gradient_warm(f, mu_n, cfg, u, None)
}

fn proximal_gradient_warm(
    f: &dyn Functional,
    mu_n: &DiscreteMeasure,
    cfg: &SchemeConfig,
    u: &PotentialSpec,
    warm: Option<&WarmStart>,
) -> Result<StepOutcome> {
    let grid = mu_n.grid();
    let pi = reference_measure(u, grid)?;
    let tau = cfg.tau;
    let mut clamped_mass = 0.0;
    let mut anchor = None;
    if uses_quantile_anchor(cfg, grid) {
        let q = Quantile1d::from_cells(mu_n)?;
        let moved = q.map_endpoints(|x| x - tau * f.wasserstein_gradient_at(mu_n, &[x])[0]);
        match moved {
            Ok(m) => anchor = Some(Anchor::Quantile(m)),
            Err(e) => debug!("falling back to grid pushforward: {e}"),
        }
    }
    let anchor = match anchor {
        Some(a) => a,
        None => {
            let d = grid.dim();
            let g = f.wasserstein_gradient_nodes(mu_n);
            let values: Vec<f64> = grid
                .points()
                .iter()
                .zip(&g)
                .map(|(x, gx)| x - tau * gx)
                .collect();
            let push = pushforward(mu_n, &PointMap::new(d, values)?)?;
            clamped_mass = push.clamped_mass;
            if clamped_mass > 1e-6 {
                warn!("pushforward clamped mass {clamped_mass:.3e} to the grid boundary");
            }
            Anchor::Measure(push.measure)
        }
    };
    let result = jko_solve(&pi, &anchor, tau, cfg.sigma, &cfg.jko, Some(mu_n), warm)?;
    Ok(StepOutcome {
        result,
        reference: pi,
        anchor,
        linearizations: 1,
        clamped_mass,
    })
}

/// Explicit Euler step `(I − τσ∇log(μⁿ/π))_#μⁿ`, split onto the grid.
/// Returns the new measure and the clamped mass.
pub fn explicit_euler_demo_step(
    mu_n: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
    u: &PotentialSpec,
) -> Result<(DiscreteMeasure, f64)> {
    let pi = reference_measure(u, mu_n.grid())?;
    let g = grad_log_ratio(mu_n, &pi)?;
    let values: Vec<f64> = mu_n
        .grid()
        .points()
        .iter()
        .zip(g.values())
        .map(|(x, gx)| x - tau * sigma * gx)
        .collect();
    let push = pushforward(mu_n, &PointMap::new(mu_n.dim(), values)?)?;
    Ok((push.measure, push.clamped_mass))
}

/// Fixed point μ* = Φ[μ*] by damped iteration `μ ← (1 − β)μ + βΦ[μ]` from
/// π, stopping when KL(Φ[μ] | μ) ≤ tol. The damping is halved whenever the
/// residual grows.
pub fn solve_minimizer(
    f: &dyn Functional,
    sigma: f64,
    u: &PotentialSpec,
    grid: &Arc<GridSpec>,
    tol: f64,
    max_iters: usize,
    damping: f64,
) -> Result<DiscreteMeasure> {
    if !(damping > 0.0 && damping <= 1.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(
            "solve_minimizer needs tol > 0 and damping in (0, 1]".into(),
        ));
    }
    let pi = reference_measure(u, grid)?;
    let mut mu = pi.clone();
    let mut beta = damping;
    let mut prev = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 0..max_iters {
        let phi = proximal_gibbs(f, &mu, sigma, u)?;
        residual = kl(&phi, &mu)?;
        if residual <= tol {
            debug!("minimizer fixed point: {it} iterations, residual {residual:.3e}");
            return Ok(mu);
        }
        if f.is_linear() {
            // Φ does not depend on μ
            return Ok(phi);
        }
        if residual > prev {
            beta = (0.5 * beta).max(1e-3);
        }
        prev = residual;
        mu = mu.mix(&phi, beta)?;
    }
    Err(Error::NonConvergence(format!(
        "minimizer fixed point stalled after {max_iters} iterations (KL residual {residual:.3e})"
    )))
}

/// One row of a run: metrics of μⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub n: usize,
    pub f_sigma: f64,
    pub gap: f64,
    pub kl_to_opt: f64,
    pub w2sq_to_opt: f64,
    pub kl_to_gibbs: f64,
    pub fisher_to_gibbs: f64,
    pub inner_iters: usize,
    pub inner_converged: bool,
}

impl RunRow {
    pub const HEADER: [&'static str; 9] = [
        "n",
        "F_sigma",
        "gap",
        "kl_to_opt",
        "w2sq_to_opt",
        "kl_to_gibbs",
        "fisher_to_gibbs",
        "inner_iters",
        "inner_converged",
    ];
}

/// Per-step quantities that are not part of the metric stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// `|I(μ⁺|ρ) − W²(μ⁺, anchor)/(τσ)²| / max(…)` for the proximal problem
    /// solved at this step; NaN where W² is not available.
    pub fw_residual: f64,
    pub linearizations: usize,
    pub clamped_mass: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub kind: SchemeKind,
    pub config: SchemeConfig,
    pub rows: Vec<RunRow>,
    /// `steps[k]` describes the step that produced `rows[k + 1]`.
    pub steps: Vec<StepStats>,
    pub final_measure: DiscreteMeasure,
    pub wall_time: f64,
    pub warnings: Vec<String>,
    /// Set when the run stopped on three consecutive inner failures.
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gap).collect()
    }
}

/// Metrics of μ against the minimizer μ* and its own Gibbs measure.
pub fn measure_row(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    sigma: f64,
    u: &PotentialSpec,
    pi: &DiscreteMeasure,
    mu_star: &DiscreteMeasure,
    f_star: f64,
) -> Result<RunRow> {
    let f_sigma = free_energy(f, mu, sigma, pi)?;
    let phi = proximal_gibbs(f, mu, sigma, u)?;
    Ok(RunRow {
        n: 0,
        f_sigma,
        gap: f_sigma - f_star,
        kl_to_opt: kl(mu, mu_star)?,
        w2sq_to_opt: w2sq_model(mu, mu_star)?.unwrap_or(f64::NAN),
        kl_to_gibbs: kl(mu, &phi)?,
        fisher_to_gibbs: relative_fisher(mu, &phi)?,
        inner_iters: 0,
        inner_converged: true,
    })
}

/// Runs the configured scheme from μ⁰ until `max_outer_iters` steps or
/// `gap ≤ outer_tol`. Row 0 describes μ⁰.
pub fn run(
    f: &dyn Functional,
    mu0: &DiscreteMeasure,
    cfg: &SchemeConfig,
    u: &PotentialSpec,
    mu_star: &DiscreteMeasure,
) -> Result<RunRecord> {
    cfg.validate(&f.constants(), u.alpha_u())?;
    mu0.ensure_same_grid(mu_star)?;
    let start = Instant::now();
    let grid = mu0.grid();
    let pi = reference_measure(u, grid)?;
    let f_star = free_energy(f, mu_star, cfg.sigma, &pi)?;
    let mut rows = vec![measure_row(f, mu0, cfg.sigma, u, &pi, mu_star, f_star)?];
    let mut steps = Vec::new();
    let mut warnings = Vec::new();
    let mut failure = None;
    let mut mu = mu0.clone();
    let mut warm: Option<WarmStart> = None;
    let mut failures_in_a_row = 0;
    if grid.dim() == 2 && grid.len() > EXACT_2D_CAP {
        warnings.push(format!(
            "w2sq_to_opt not computed: 2D grid of {} nodes exceeds the exact cap {EXACT_2D_CAP}",
            grid.len()
        ));
    }

    for n in 1..=cfg.max_outer_iters {
        if rows.last().is_some_and(|r| r.gap <= cfg.outer_tol) {
            break;
        }
        let (next, stats, iters, converged) = match cfg.kind {
            SchemeKind::ExplicitEulerDemo => {
                let (m, clamped) = explicit_euler_demo_step(&mu, cfg.tau, cfg.sigma, u)?;
                let stats = StepStats {
                    fw_residual: f64::NAN,
                    linearizations: 0,
                    clamped_mass: clamped,
                };
                (m, stats, 0, true)
            }
            kind => {
                let out = match kind {
                    SchemeKind::ProximalPoint => proximal_point_warm(f, &mu, cfg, u, warm.as_ref())?,
                    SchemeKind::ProxLinear => prox_linear_warm(f, &mu, cfg, u, warm.as_ref())?,
                    _ => proximal_gradient_warm(f, &mu, cfg, u, warm.as_ref())?,
                };
                let fw = fisher_wasserstein_residual(
                    &out.result.minimizer,
                    &out.anchor,
                    &out.reference,
                    cfg.tau,
                    cfg.sigma,
                )?;
                warm = out.result.warm.clone();
                let stats = StepStats {
                    fw_residual: fw,
                    linearizations: out.linearizations,
                    clamped_mass: out.clamped_mass,
                };
                (out.result.minimizer, stats, out.result.iterations, out.result.converged)
            }
        };
        if stats.clamped_mass > 1e-6 {
            warnings.push(format!(
                "step {n}: pushforward clamped mass {:.3e} to the boundary",
                stats.clamped_mass
            ));
        }
        let mut row = measure_row(f, &next, cfg.sigma, u, &pi, mu_star, f_star)?;
        row.n = n;
        row.inner_iters = iters;
        row.inner_converged = converged;
        debug!(
            "{} step {n}: gap {:.6e}, inner {iters} ({})",
            cfg.kind.name(),
            row.gap,
            if converged { "converged" } else { "not converged" }
        );
        rows.push(row);
        steps.push(stats);
        mu = next;
        if converged {
            failures_in_a_row = 0;
        } else {
            failures_in_a_row += 1;
            warnings.push(format!("step {n}: inner solver did not converge"));
            if failures_in_a_row >= 3 {
                failure = Some(format!("three consecutive inner failures ending at step {n}"));
                break;
            }
        }
    }
    let wall_time = start.elapsed().as_secs_f64();
    info!(
        "{} run: {} steps in {wall_time:.2} s, final gap {:.3e}",
        cfg.kind.name(),
        rows.len() - 1,
        rows.last().map_or(f64::NAN, |r| r.gap)
    );
    Ok(RunRecord {
        kind: cfg.kind,
        config: cfg.clone(),
        rows,
        steps,
        final_measure: mu,
        wall_time,
        warnings,
        failure,
    })
}
