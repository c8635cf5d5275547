//! The inner proximal step
//! `μ⁺ = argmin_μ σ·KL(μ|ρ) + W²(μ, μ_prev)/(2τ)`.
//!
//! Two solvers are provided:
//!
//! * [`JkoSolver::MirrorDescent`] (1D) minimizes the objective with W² taken
//!   in the cell reading (see [`crate::transport`]). It runs damped Newton
//!   steps in cumulative-mass coordinates with an Armijo line search, and
//!   stops on a certified bound on the suboptimality. The anchor may be any
//!   piecewise-linear quantile function, which lets the proximal-gradient
//!   scheme push forward without re-binning.
//! * [`JkoSolver::EntropicScaling`] (any dimension) replaces W² with the
//!   entropic cost at level ε and solves the resulting problem by
//!   alternating scaling updates in the log domain. The Gaussian kernel is
//!   applied axis by axis. With `debias` the kernel rows are reweighted by
//!   the self-transport scaling of the anchor, so that `ρ = μ_prev` is
//!   returned unchanged.

use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::kl;
use crate::measures::{DiscreteMeasure, GridSpec};
use crate::transport::{cell_moments, w2sq, w2sq_cells, w2sq_cells_grad, CellMoments, Quantile1d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JkoSolver {
    EntropicScaling,
    MirrorDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JkoConfig {
    /// `None` picks mirror descent in 1D and entropic scaling in 2D.
    pub solver: Option<JkoSolver>,
    /// Final entropic level in squared-length units; default `h²/4`.
    pub epsilon: Option<f64>,
    pub epsilon_schedule: Option<Vec<f64>>,
    pub inner_tol: f64,
    pub marginal_tol: f64,
    pub max_inner_iters: usize,
    /// Default: on in 2D, off in 1D.
    pub debias: Option<bool>,
}

impl Default for JkoConfig {
    fn default() -> Self {
        Self {
            solver: None,
            epsilon: None,
            epsilon_schedule: None,
            inner_tol: 1e-10,
            marginal_tol: 1e-9,
            max_inner_iters: 20_000,
            debias: None,
        }
    }
}

impl JkoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_tol > 0.0) || !(self.marginal_tol > 0.0) || self.max_inner_iters == 0 {
            return Err(Error::InvalidParameter(
                "inner tolerances and iteration budget must be positive".into(),
            ));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::InvalidParameter("epsilon must be positive".into()));
            }
        }
        if let Some(s) = &self.epsilon_schedule {
            if s.is_empty() || s.iter().any(|e| !(*e > 0.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::InvalidParameter(
                    "epsilon schedule must be positive and strictly decreasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn solver_for(&self, dim: usize) -> JkoSolver {
        self.solver.unwrap_or(if dim == 1 {
            JkoSolver::MirrorDescent
        } else {
            JkoSolver::EntropicScaling
        })
    }

    pub fn debias_for(&self, dim: usize) -> bool {
        self.debias.unwrap_or(dim > 1)
    }

    pub fn final_epsilon(&self, grid: &GridSpec) -> f64 {
        self.epsilon.unwrap_or_else(|| {
            let h = (0..grid.dim()).map(|k| grid.spacing(k)).fold(f64::INFINITY, f64::min);
            h * h / 4.0
        })
    }

    fn schedule(&self, grid: &GridSpec) -> Vec<f64> {
        match &self.epsilon_schedule {
            Some(s) => s.clone(),
            None => {
                let e = self.final_epsilon(grid);
                vec![16.0 * e, 4.0 * e, e]
            }
        }
    }
}

/// Scalings kept between consecutive steps of the entropic solver.
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub epsilon: f64,
    pub log_a: Vec<f64>,
    pub log_b: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct JkoResult {
    pub minimizer: DiscreteMeasure,
    /// Value of the objective the solver minimized (cell-reading W² for
    /// mirror descent, the entropic surrogate for scaling).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_residual: f64,
    pub warm: Option<WarmStart>,
}

/// Wasserstein anchor of a proximal step.
#[derive(Clone, Debug)]
pub enum Anchor {
    Measure(DiscreteMeasure),
    /// 1D quantile function; only the mirror-descent solver accepts it.
    Quantile(Quantile1d),
}

impl Anchor {
    fn quantile(&self) -> Result<Quantile1d> {
        match self {
            Anchor::Measure(m) => Quantile1d::from_cells(m),
            Anchor::Quantile(q) => Ok(q.clone()),
        }
    }
}

/// `σ·KL(μ|ρ) + W²(μ, μ_prev)/(2τ)`, with W² in the cell reading in 1D and
/// the exact linear program in 2D.
pub fn jko_objective(
    mu: &DiscreteMeasure,
    rho: &DiscreteMeasure,
    mu_prev: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
) -> Result<f64> {
    let k = kl(mu, rho)?;
    let w = if mu.dim() == 1 {
        w2sq_cells(mu, mu_prev)?
    } else {
        w2sq(mu, mu_prev)?
    };
    Ok(sigma * k + w / (2.0 * tau))
}

pub fn jko_step(
    rho: &DiscreteMeasure,
    mu_prev: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
    cfg: &JkoConfig,
) -> Result<JkoResult> {
    jko_solve(rho, &Anchor::Measure(mu_prev.clone()), tau, sigma, cfg, None, None)
}

/// General entry point: `init` seeds mirror descent, `warm` seeds the
/// entropic scalings.
pub fn jko_solve(
    rho: &DiscreteMeasure,
    anchor: &Anchor,
    tau: f64,
    sigma: f64,
    cfg: &JkoConfig,
    init: Option<&DiscreteMeasure>,
    warm: Option<&WarmStart>,
) -> Result<JkoResult> {
    cfg.validate()?;
    if !(tau > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau and sigma must be positive (got {tau}, {sigma})"
        )));
    }
    if let Some(i) = rho.weights().iter().position(|&w| w <= 0.0) {
        return Err(Error::InvalidMeasure(format!(
            "reference measure vanishes at node {i}"
        )));
    }
    if let Anchor::Measure(m) = anchor {
        rho.ensure_same_grid(m)?;
    }
    match cfg.solver_for(rho.dim()) {
        JkoSolver::MirrorDescent => {
            if rho.dim() != 1 {
                return Err(Error::Dimension {
                    expected: 1,
                    got: rho.dim(),
                });
            }
            let q = anchor.quantile()?;
            let start = match (init, anchor) {
                (Some(m), _) => m.clone(),
                (None, Anchor::Measure(m)) => m.clone(),
                (None, Anchor::Quantile(_)) => rho.clone(),
            };
            mirror_descent(rho, &q, tau, sigma, cfg, &start)
        }
        JkoSolver::EntropicScaling => {
            let Anchor::Measure(nu) = anchor else {
                return Err(Error::InvalidParameter(
                    "entropic scaling needs a grid measure as anchor".into(),
                ));
            };
            entropic_scaling(rho, nu, tau, sigma, cfg, warm)
        }
    }
}

// ---------------------------------------------------------------------------
// mirror descent (1D)
//
// Damped Newton in cumulative-mass coordinates C_k = μ_0 + … + μ_k. Read in
// log-weights the step is a mirror step preconditioned by the entropy, and
// both Hessian blocks (entropy and cell-model W²) are tridiagonal in C. The
// stopping rule is the certificate σ·KL(μ | Φ_J[μ]) ≥ J(μ) − min J.

/// Weights below this are held at it: the exact minimizer can carry tail
/// weights far below the smallest double, and their contribution to the
/// objective is below 1e-240 either way.
const WEIGHT_FLOOR: f64 = 1e-250;
/// Cells lighter than this may shrink multiplicatively in a line search.
const SMALL_CELL: f64 = 1e-10;

struct Eval {
    objective: f64,
    mu: Vec<f64>,
    /// ∂J/∂μ_i, defined up to an additive constant
    g: Vec<f64>,
    gw: Vec<f64>,
    /// σ·KL(μ | Φ_J[μ]), an upper bound on objective − minimum
    certificate: f64,
}

struct Problem<'a> {
    grid: &'a Arc<GridSpec>,
    log_rho: Vec<f64>,
    anchor: &'a Quantile1d,
    tau: f64,
    sigma: f64,
}

impl Problem<'_> {
    fn evaluate(&self, mu: Vec<f64>) -> Result<Eval> {
        let mu = mu.into_iter().map(|w| w.max(WEIGHT_FLOOR)).collect();  // also absorbs overshoot below the floor
        let m = DiscreteMeasure::from_weights(self.grid.clone(), mu)?;
        let (w2, gw) = w2sq_cells_grad(&m, self.anchor)?;
        let mu = m.weights().to_vec();
        let (s, t2) = (self.sigma, 2.0 * self.tau);
        let mut klv = 0.0;
        let g: Vec<f64> = (0..mu.len())
            .map(|i| {
                let lr = mu[i].ln() - self.log_rho[i];
                klv += mu[i] * lr;
                s * lr + gw[i] / t2
            })
            .collect();
        let gbar: f64 = mu.iter().zip(&g).map(|(m, g)| m * g).sum();
        // KL(μ|Φ_J) = log Σ μ exp(−(g − ḡ)/σ)
        let z: f64 = mu
            .iter()
            .zip(&g)
            .map(|(m, g)| m * (-(g - gbar) / s).exp_m1())
            .sum();
        let certificate = (s * z.ln_1p()).max(0.0);
        Ok(Eval {
            objective: s * klv + w2 / t2,
            mu,
            g,
            gw,
            certificate,
        })
    }
}

/// Newton direction in cumulative coordinates. Cell `i` contributes the
/// element matrix `[[a, b], [b, c]]/μ_i` on `(C_{i−1}, C_i)` with
/// `a = σ + q·rr`, `c = σ + q·ss`, `b = q·sr − σ` and `q = h/τ`, the ends
/// `C_{−1}`, `C_{n−1}` being fixed. Elimination runs in series form so that
/// cells of vastly different mass do not cancel.
fn newton_direction(
    mu: &[f64],
    cells: &[CellMoments],
    sigma: f64,
    q: f64,
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let e = rhs.len();
    let a = |i: usize| (sigma + q * cells[i].rr) / mu[i];
    let b = |i: usize| (q * cells[i].sr - sigma) / mu[i];
    let det_over_mu = |i: usize| {
        let m = &cells[i];
        (sigma * q * m.total + q * q * (m.rr * m.ss - m.sr * m.sr).max(0.0)) / mu[i]
    };
    let mut piv = vec![0.0; e];
    let mut y = vec![0.0; e];
    // left-accumulated stiffness on C_k, before cell k + 1 is added
    let mut left = (sigma + q * cells[0].ss) / mu[0];
    for k in 0..e {
        piv[k] = left + a(k + 1);
        y[k] = rhs[k] - if k > 0 { b(k) / piv[k - 1] * y[k - 1] } else { 0.0 };
        let i = k + 1;
        left = ((sigma + q * cells[i].ss) * left + det_over_mu(i))
            / (left * mu[i] + sigma + q * cells[i].rr);
        if !(piv[k] > 0.0 && piv[k].is_finite()) {
            return None;
        }
    }
    let mut x = vec![0.0; e];
    for k in (0..e).rev() {
        let next = if k + 1 < e { b(k + 1) * x[k + 1] } else { 0.0 };
        x[k] = (y[k] - next) / piv[k];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn mirror_descent(
    rho: &DiscreteMeasure,
    anchor: &Quantile1d,
    tau: f64,
    sigma: f64,
    cfg: &JkoConfig,
    start: &DiscreteMeasure,
) -> Result<JkoResult> {
    let grid = rho.grid().clone();
    let n = rho.len();
    let p = Problem {
        grid: &grid,
        log_rho: rho.weights().iter().map(|w| w.ln()).collect(),
        anchor,
        tau,
        sigma,
    };
    // candidates: the start nudged toward ρ, and one Gibbs update from it
    let mut cur = p.evaluate(
        start
            .weights()
            .iter()
            .zip(rho.weights())
            .map(|(s, r)| (1.0 - 1e-6) * s + 1e-6 * r)
            .collect(),
    )?;
    let logs: Vec<f64> = (0..n)
        .map(|i| p.log_rho[i] - cur.gw[i] / (2.0 * tau * sigma))
        .collect();
    if let Ok(gibbs) = DiscreteMeasure::from_log_weights(grid.clone(), &logs) {
        let alt = p.evaluate(gibbs.weights().to_vec())?;
        if alt.objective < cur.objective {
            cur = alt;
        }
    }
    let done = |e: &Eval| {
        e.certificate <= cfg.inner_tol * e.objective.abs() || e.certificate <= 1e-15
    };
    let mut iterations = 0;
    let mut converged = n == 1;

    while !converged && iterations < cfg.max_inner_iters {
        if done(&cur) {
            converged = true;
            break;
        }
        let e = n - 1;
        let gc: Vec<f64> = (0..e).map(|k| -(cur.g[k] - cur.g[k + 1])).collect();
        let m = DiscreteMeasure::from_weights(grid.clone(), cur.mu.clone())?;
        let cells = cell_moments(&m, anchor)?;
        let dc = newton_direction(&cur.mu, &cells, sigma, grid.spacing(0) / tau, &gc)
            .ok_or_else(|| Error::NonConvergence("Newton system is not positive definite".into()))?;
        let decrement: f64 = dc.iter().zip(&gc).map(|(a, b)| a * b).sum();
        if !(decrement > 1e-30) {
            converged = cur.certificate <= 1e-12;
            break;
        }
        let dmu: Vec<f64> = (0..n)
            .map(|i| {
                let hi = if i < e { dc[i] } else { 0.0 };
                let lo = if i > 0 { dc[i - 1] } else { 0.0 };
                hi - lo
            })
            .collect();
        // fraction-to-boundary on cells that carry mass; negligible cells
        // shrink multiplicatively instead so they never block the step
        let small = |m: f64| m < SMALL_CELL;
        let mut step: f64 = 1.0;
        for (m, d) in cur.mu.iter().zip(&dmu) {
            if *d < 0.0 && !small(*m) {
                step = step.min(-0.99 * m / d);
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = cur
                .mu
                .iter()
                .zip(&dmu)
                .map(|(&m, &d)| {
                    if d < 0.0 && small(m) {
                        m * (step * d / m).exp()
                    } else {
                        m + step * d
                    }
                })
                .collect();
            if trial.iter().all(|w| w.is_finite()) {
                if let Ok(t) = p.evaluate(trial) {
                    let armijo = t.objective <= cur.objective - 1e-4 * step * decrement;
                    // below roundoff in J, trust the certificate instead
                    let flat = t.objective <= cur.objective + 1e-14 * cur.objective.abs().max(1.0)
                        && t.certificate < cur.certificate;
                    if t.objective.is_finite() && (armijo || flat) {
                        accepted = Some(t);
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some(next) = accepted else {
            converged = cur.certificate <= 1e-12_f64.max(1e3 * cfg.inner_tol * cur.objective.abs());
            debug!(
                "Newton line search stalled at iteration {iterations}, certificate {:.3e}",
                cur.certificate
            );
            break;
        };
        cur = next;
    }
    if !converged && done(&cur) {
        converged = true;
    }
    if !converged {
        warn!(
            "mirror descent stopped after {iterations} iterations with certificate {:.3e}",
            cur.certificate
        );
    }
    Ok(JkoResult {
        minimizer: DiscreteMeasure::from_weights(grid, cur.mu)?,
        objective: cur.objective,
        iterations,
        converged,
        marginal_residual: 0.0,
        warm: None,
    })
}

// ---------------------------------------------------------------------------
// entropic scaling

/// Gaussian kernel `exp(−|x − y|²/ε)` on a tensor grid, applied in the log
/// domain one axis at a time.
pub struct LogKernel {
    dims: Vec<usize>,
    tables: Vec<Vec<f64>>,
}

fn lse_row(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl LogKernel {
    pub fn new(grid: &GridSpec, eps: f64) -> Self {
        let mut dims = Vec::new();
        let mut tables = Vec::new();
        for k in 0..grid.dim() {
            let a = grid.axis(k);
            let n = a.nodes;
            let xs: Vec<f64> = (0..n).map(|i| a.coord(i)).collect();
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    t[i * n + j] = (xs[i] - xs[j]).powi(2) / eps;
                }
            }
            dims.push(n);
            tables.push(t);
        }
        Self { dims, tables }
    }

    fn axis_pass(&self, axis: usize, v: &[f64]) -> Vec<f64> {
        let n = self.dims[axis];
        let t = &self.tables[axis];
        let stride: usize = self.dims[axis + 1..].iter().product();
        let outer = v.len() / (n * stride);
        let mut out = vec![0.0; v.len()];
        let work = |(idx, o): (usize, &mut f64)| {
            let block = idx / (n * stride);
            let rem = idx % (n * stride);
            let i = rem / stride;
            let inner = rem % stride;
            let base = block * n * stride + inner;
            let row = &t[i * n..(i + 1) * n];
            *o = lse_row((0..n).map(|j| v[base + j * stride] - row[j]));
        };
        if v.len() >= 256 {
            out.par_iter_mut().enumerate().for_each(work);
        } else {
            out.iter_mut().enumerate().for_each(work);
        }
        let _ = outer;
        out
    }

    /// `out_i = log Σ_j exp(v_j − |x_i − x_j|²/ε)`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut cur = self.axis_pass(self.dims.len() - 1, v);
        for axis in (0..self.dims.len() - 1).rev() {
            cur = self.axis_pass(axis, &cur);
        }
        cur
    }
}

/// Symmetric scaling `s` with `s ⊙ K s = ν` on the support of ν, in logs.
fn self_scaling(kernel: &LogKernel, log_nu: &[f64], tol: f64, max_iters: usize) -> Vec<f64> {
    let mut ls: Vec<f64> = log_nu.iter().map(|l| 0.5 * l).collect();
    for _ in 0..max_iters {
        let ks = kernel.apply(&ls);
        let mut err: f64 = 0.0;
        for i in 0..ls.len() {
            if log_nu[i].is_finite() {
                err = err.max((ls[i] + ks[i] - log_nu[i]).abs());
                ls[i] = 0.5 * (ls[i] + log_nu[i] - ks[i]);
            }
        }
        if err <= tol {
            break;
        }
    }
    ls
}

fn entropic_scaling(
    rho: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
    cfg: &JkoConfig,
    warm: Option<&WarmStart>,
) -> Result<JkoResult> {
    let grid = rho.grid().clone();
    let n = rho.len();
    let lam = 2.0 * tau * sigma;
    let log_rho: Vec<f64> = rho.weights().iter().map(|w| w.ln()).collect();
    let log_nu: Vec<f64> = nu
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut debias = cfg.debias_for(grid.dim());
    if debias && nu.weights().iter().any(|&w| w <= 0.0) {
        warn!("anchor has empty nodes; entropic debiasing disabled for this step");
        debias = false;
    }
    let eps_final = cfg.final_epsilon(&grid);
    let mut schedule = cfg.schedule(&grid);
    if let Some(w) = warm {
        if (w.epsilon - eps_final).abs() <= 1e-12 * eps_final && w.log_a.len() == n {
            schedule = vec![eps_final];
        }
    }
    // potentials ε·log a, ε·log b carried across stages
    let (mut f_pot, mut g_pot) = match warm {
        Some(w) if w.log_a.len() == n => (
            w.log_a.iter().map(|v| v * w.epsilon).collect::<Vec<_>>(),
            w.log_b.iter().map(|v| v * w.epsilon).collect::<Vec<_>>(),
        ),
        _ => (vec![0.0; n], vec![0.0; n]),
    };

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut objective = f64::NAN;
    let mut converged = false;
    let mut log_mu = vec![0.0; n];
    let mut log_a = vec![0.0; n];
    let mut log_b = vec![0.0; n];
    let mut eps = eps_final;

    for (stage, &stage_eps) in schedule.iter().enumerate() {
        eps = stage_eps;
        let last = stage + 1 == schedule.len();
        let kernel = LogKernel::new(&grid, eps);
        let log_r = if debias {
            self_scaling(&kernel, &log_nu, 1e-13, 100_000)
        } else {
            vec![0.0; n]
        };
        let theta = lam / (lam + eps);
        log_a = f_pot.iter().map(|f| f / eps).collect();
        let mut ka = kernel.apply(&log_a.iter().zip(&log_r).map(|(a, r)| a + r).collect::<Vec<_>>());
        let marginal_tol = if last { cfg.marginal_tol } else { cfg.marginal_tol.max(1e-6) };
        let mut prev_obj = f64::INFINITY;
        let mut stage_iters = 0;
        loop {
            for j in 0..n {
                log_b[j] = log_nu[j] - ka[j];
            }
            let kb = kernel.apply(&log_b);
            for i in 0..n {
                log_a[i] = theta * (log_rho[i] - log_r[i] - kb[i]);
                log_mu[i] = log_a[i] + log_r[i] + kb[i];
            }
            ka = kernel.apply(&log_a.iter().zip(&log_r).map(|(a, r)| a + r).collect::<Vec<_>>());
            residual = 0.0;
            let mut col_term = 0.0;
            for j in 0..n {
                if log_nu[j].is_finite() {
                    let c = (log_b[j] + ka[j]).exp();
                    residual = f64::max(residual, (c - nu.weights()[j]).abs());
                    col_term += c * log_b[j];
                }
            }
            let mut mass = 0.0;
            let mut kl_term = 0.0;
            let mut row_term = 0.0;
            for i in 0..n {
                let m = log_mu[i].exp();
                mass += m;
                if m > 0.0 {
                    kl_term += m * (log_mu[i] - log_rho[i]);
                    row_term += m * log_a[i];
                }
            }
            objective = sigma * (kl_term - mass + 1.0) + eps / (2.0 * tau) * (row_term + col_term - mass);
            iterations += 1;
            stage_iters += 1;
            if !residual.is_finite() || !objective.is_finite() {
                return Err(Error::NonConvergence(format!(
                    "entropic scaling diverged at ε = {eps} (residual {residual})"
                )));
            }
            let rel = (objective - prev_obj).abs() <= cfg.inner_tol * objective.abs().max(1e-300);
            prev_obj = objective;
            if residual <= marginal_tol && (rel || !last) {
                converged = last;
                break;
            }
            if iterations >= cfg.max_inner_iters {
                break;
            }
        }
        debug!("entropic stage ε = {eps:.3e}: {stage_iters} iterations, residual {residual:.3e}");
        f_pot = log_a.iter().map(|a| a * eps).collect();
        g_pot = log_b.iter().map(|b| if b.is_finite() { b * eps } else { 0.0 }).collect();
        if iterations >= cfg.max_inner_iters {
            break;
        }
    }
    let _ = g_pot;
    if !converged {
        warn!("entropic scaling stopped after {iterations} iterations, residual {residual:.3e}");
    }
    let minimizer = DiscreteMeasure::from_log_weights(grid, &log_mu)?;
    Ok(JkoResult {
        minimizer,
        objective,
        iterations,
        converged,
        marginal_residual: residual,
        warm: Some(WarmStart {
            epsilon: eps,
            log_a,
            log_b,
        }),
    })
}

/// Self-transport log-scaling of ν at level ε (exposed for tests/oracles).
pub fn debias_log_scaling(nu: &DiscreteMeasure, eps: f64) -> Vec<f64> {
    let log_nu: Vec<f64> = nu
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    self_scaling(&LogKernel::new(nu.grid(), eps), &log_nu, 1e-13, 100_000)
}
