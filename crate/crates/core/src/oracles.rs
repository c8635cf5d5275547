//! Slow reference computations for validating the inner solvers.
//!
//! [`brute_force_jko`] evaluates the 1D cell-reading W² and its weight
//! gradient from scratch in x-space: on each sub-interval where the map
//! `T = Q_ν ∘ F_μ` is affine, the integrands are polynomials of degree ≤ 3
//! and Simpson's rule is exact. It shares no code with the transport module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub restarts: usize,
    /// Objective evaluations per restart.
    pub max_evaluations: usize,
    /// Target bound on objective − minimum.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_evaluations: 200_000,
            tolerance: 1e-13,
            seed: 7,
        }
    }
}

/// Largest support accepted by [`brute_force_jko`].
pub const BRUTE_FORCE_CAP: usize = 32;

/// Cell layout of a 1D grid measure: edges and cumulative masses.
struct Cells {
    lower_edge: f64,
    h: f64,
    /// C_{−1} = 0, C_0, …; `cum[i]` is the mass left of cell i
    cum: Vec<f64>,
    mass: Vec<f64>,
}

impl Cells {
    fn new(lower_edge: f64, h: f64, mass: &[f64]) -> Self {
        let mut cum = Vec::with_capacity(mass.len() + 1);
        let mut c = 0.0;
        cum.push(0.0);
        for &m in mass {
            c += m;
            cum.push(c);
        }
        Self {
            lower_edge,
            h,
            cum,
            mass: mass.to_vec(),
        }
    }

    fn edge(&self, i: usize) -> f64 {
        self.lower_edge + self.h * i as f64
    }

    /// Quantile at `t` using the cell that carries `t_ref` (so that values
    /// at the ends of a sub-interval stay on one affine piece).
    fn quantile(&self, t: f64, t_ref: f64) -> f64 {
        let total = *self.cum.last().unwrap();
        let t_ref = t_ref.clamp(0.0, total);
        let mut j = self
            .mass
            .iter()
            .enumerate()
            .position(|(j, &m)| m > 0.0 && self.cum[j + 1] >= t_ref)
            .unwrap_or(self.mass.len() - 1);
        while self.mass[j] <= 0.0 && j > 0 {
            j -= 1;
        }
        self.edge(j) + self.h * (t - self.cum[j]) / self.mass[j]
    }
}

fn cells_of(mu: &DiscreteMeasure, weights: &[f64]) -> Cells {
    let ax = mu.grid().axis(0);
    let h = ax.spacing();
    Cells::new(ax.lower - 0.5 * h, h, weights)
}

/// Cell-reading W²(μ, ν) and `∂W²/∂μ_i` (the cell average of the potential
/// φ with `φ' = 2(x − T(x))`, `φ = 0` at the left edge).
fn w2_and_gradient(mu: &Cells, nu: &Cells) -> (f64, Vec<f64>) {
    let n = mu.mass.len();
    let mut grad = vec![0.0; n];
    let mut w2 = 0.0;
    let mut phi = 0.0;
    for i in 0..n {
        let m = mu.mass[i];
        let (c0, c1) = (mu.cum[i], mu.cum[i + 1]);
        let e0 = mu.edge(i);
        // breakpoints in t, mapped back into x within the cell
        let mut ts = vec![c0];
        ts.extend(nu.cum.iter().copied().filter(|&d| d > c0 && d < c1));
        ts.push(c1);
        let x_of = |t: f64| if m > 0.0 { e0 + mu.h * (t - c0) / m } else { e0 };
        let mut cell_int = 0.0;
        if m > 0.0 {
            for w in ts.windows(2) {
                let (a, b) = (x_of(w[0]), x_of(w[1]));
                if !(b > a) {
                    continue;
                }
                let tm = 0.5 * (w[0] + w[1]);
                let xm = 0.5 * (a + b);
                let d = |x: f64, t: f64| x - nu.quantile(t, tm);
                let (da, dm, db) = (d(a, w[0]), d(xm, tm), d(b, w[1]));
                let len = b - a;
                w2 += m / mu.h * len * (da * da + 4.0 * dm * dm + db * db) / 6.0;
                let pa = phi;
                let pm = pa + (xm - a) * (da + dm);
                let pb = pa + len * (da + db);
                cell_int += len * (pa + 4.0 * pm + pb) / 6.0;
                phi = pb;
            }
        } else {
            // massless cell: T is constant at Q_ν(C_i) across it
            let q = nu.quantile(c0, c0);
            let (da, db) = (e0 - q, e0 + mu.h - q);
            let pm = phi + 0.5 * mu.h * (da + 0.5 * (da + db));
            let pb = phi + mu.h * (da + db);
            cell_int = mu.h * (phi + 4.0 * pm + pb) / 6.0;
            phi = pb;
        }
        grad[i] = cell_int / mu.h;
    }
    (w2, grad)
}

struct JkoInstance<'a> {
    log_rho: Vec<f64>,
    nu: Cells,
    mu: &'a DiscreteMeasure,
    tau: f64,
    sigma: f64,
}

impl JkoInstance<'_> {
    fn eval(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let cells = cells_of(self.mu, w);
        let (w2, gw) = w2_and_gradient(&cells, &self.nu);
        let mut obj = w2 / (2.0 * self.tau);
        let mut g = vec![0.0; w.len()];
        for i in 0..w.len() {
            let lr = w[i].ln() - self.log_rho[i];
            obj += self.sigma * w[i] * lr;
            g[i] = self.sigma * (lr + 1.0) + gw[i] / (2.0 * self.tau);
        }
        (obj, g)
    }

    /// Upper bound on objective − minimum from the sandwich inequality.
    fn certificate(&self, w: &[f64], g: &[f64]) -> f64 {
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        let s: f64 = w.iter().zip(g).map(|(m, gi)| m * (-(gi - gmin) / self.sigma).exp()).sum();
        let mean: f64 = w.iter().zip(g).map(|(m, gi)| m * (gi - gmin)).sum();
        (mean + self.sigma * s.ln()).max(0.0)
    }

    /// Multiplicative-weights descent with backtracking on the relative
    /// smoothness inequality.
    fn descend(&self, mut w: Vec<f64>, budget: &OracleBudget) -> (Vec<f64>, f64, f64) {
        let (mut obj, mut g) = self.eval(&w);
        let mut eta = 1.0 / self.sigma;
        let mut evals = 1;
        let mut cert = self.certificate(&w, &g);
        while evals < budget.max_evaluations && cert > budget.tolerance * obj.abs().max(1.0) {
            let gbar: f64 = w.iter().zip(&g).map(|(m, gi)| m * gi).sum();
            let mut logs: Vec<f64> = w.iter().zip(&g).map(|(m, gi)| m.ln() - eta * (gi - gbar)).collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            logs.iter_mut().for_each(|v| *v -= top);
            let z: f64 = logs.iter().map(|v| v.exp()).sum();
            let cand: Vec<f64> = logs.iter().map(|v| (v.exp() / z).max(1e-300)).collect();
            let (c_obj, c_g) = self.eval(&cand);
            evals += 1;
            let lin: f64 = g.iter().zip(cand.iter().zip(&w)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let div: f64 = cand.iter().zip(&w).map(|(a, b)| a * (a / b).ln()).sum();
            if c_obj <= obj + lin + div / eta + 1e-15 * obj.abs().max(1.0) {
                w = cand;
                obj = c_obj;
                g = c_g;
                cert = self.certificate(&w, &g);
                eta *= 1.5;
            } else {
                eta *= 0.5;
                if eta < 1e-14 {
                    break;
                }
            }
        }
        (w, obj, cert)
    }
}

/// Minimizer of `σ·KL(μ|ρ) + W²_cell(μ, μ_prev)/(2τ)` on a 1D grid of at
/// most [`BRUTE_FORCE_CAP`] nodes, by multiplicative-weights descent from
/// `budget.restarts` random starts. Errors when a restart misses the
/// tolerance or the restarts disagree by more than 1e-8 in objective.
pub fn brute_force_jko(
    rho: &DiscreteMeasure,
    mu_prev: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
    budget: &OracleBudget,
) -> Result<DiscreteMeasure> {
    if rho.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: rho.dim(),
        });
    }
    rho.ensure_same_grid(mu_prev)?;
    let n = rho.len();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::SupportCap {
            rows: n,
            cols: n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    if !(tau > 0.0 && sigma > 0.0) || budget.restarts == 0 || budget.max_evaluations == 0 {
        return Err(Error::InvalidParameter("oracle needs tau, sigma > 0 and a nonzero budget".into()));
    }
    if rho.weights().iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidMeasure("oracle reference must be positive".into()));
    }
    let inst = JkoInstance {
        log_rho: rho.weights().iter().map(|w| w.ln()).collect(),
        nu: cells_of(mu_prev, mu_prev.weights()),
        mu: rho,
        tau,
        sigma,
    };
    let runs: Vec<(Vec<f64>, f64, f64)> = (0..budget.restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(budget.seed.wrapping_add(k as u64));
            let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            inst.descend(raw.into_iter().map(|v| v / s).collect(), budget)
        })
        .collect();
    let mut best = 0;
    for (k, r) in runs.iter().enumerate() {
        if r.1 < runs[best].1 {
            best = k;
        }
    }
    let (lo, hi) = runs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r.1), h.max(r.1)));
    let worst_cert = runs.iter().map(|r| r.2).fold(0.0, f64::max);
    if hi - lo > 1e-8 || worst_cert > budget.tolerance * lo.abs().max(1.0) {
        return Err(Error::NonConvergence(format!(
            "oracle restarts disagree by {:.3e} (worst certificate {worst_cert:.3e})",
            hi - lo
        )));
    }
    DiscreteMeasure::from_weights(rho.grid().clone(), runs[best].0.clone())
}

/// The brute-force objective itself, for reporting.
pub fn oracle_objective(
    mu: &DiscreteMeasure,
    rho: &DiscreteMeasure,
    mu_prev: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
) -> Result<f64> {
    if mu.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: mu.dim(),
        });
    }
    mu.ensure_same_grid(rho)?;
    mu.ensure_same_grid(mu_prev)?;
    let nu = cells_of(mu_prev, mu_prev.weights());
    let (w2, _) = w2_and_gradient(&cells_of(mu, mu.weights()), &nu);
    let k: f64 = mu
        .weights()
        .iter()
        .zip(rho.weights())
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, r)| m * (m / r).ln())
        .sum();
    Ok(sigma * k + w2 / (2.0 * tau))
}

/// One exact proximal step for Gaussians with F = 0 and U = αx²/2: the
/// minimizer over N(m', s') of
/// `σ·KL(N(m', s') | N(0, 1/α)) + ((m' − m)² + (√s' − √s)²)/(2τ)`.
/// The mean solves a linear equation; `r = √s'` is found by safeguarded
/// Newton–bisection on the increasing stationarity function.
pub fn gaussian_jko_oracle_1d(mean: f64, var: f64, tau: f64, sigma: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(var > 0.0 && alpha > 0.0 && tau > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameter(
            "gaussian oracle needs var, alpha, tau, sigma > 0".into(),
        ));
    }
    let m = mean / (1.0 + tau * sigma * alpha);
    let sd = var.sqrt();
    let g = |r: f64| sigma * (alpha * r - 1.0 / r) + (r - sd) / tau;
    let dg = |r: f64| sigma * (alpha + 1.0 / (r * r)) + 1.0 / tau;
    let (mut lo, mut hi) = (1e-300f64, 1.0f64);
    while g(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NonConvergence("gaussian oracle could not bracket the root".into()));
        }
    }
    let mut r = 0.5 * (lo.max(1e-6 * hi) + hi);
    for _ in 0..200 {
        let v = g(r);
        if v.abs() <= 1e-15 * (sigma / r + r / tau) {
            return Ok((m, r * r));
        }
        if v < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let newton = r - v / dg(r);
        r = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            return Ok((m, r * r));
        }
    }
    Err(Error::NonConvergence("gaussian oracle root finder did not converge".into()))
}

/// First-order residual of the entropic JKO objective
/// `σ·KL(μ|ρ) + (⟨c,γ⟩ + ε·Σγ(log γ − 1)) / 2τ` at `mu`.
///
/// The row scaling `a` of the entropic plan between `mu` and `nu` comes from
/// an independent Sinkhorn solve; at the minimizer
/// `σ·log(μ/ρ) + ε·log(a)/2τ` is constant on the support. Returns the largest
/// deviation from its μ-weighted mean.
pub fn entropic_jko_residual(
    mu: &DiscreteMeasure,
    rho: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
    eps: f64,
) -> Result<f64> {
    if mu.weights().iter().chain(rho.weights()).any(|&w| w <= 0.0) {
        return Err(Error::InvalidParameter(
            "entropic residual needs full-support mu and rho".into(),
        ));
    }
    let (_, state) = crate::transport::sinkhorn(mu, nu, eps, 1e-14, 200_000)?;
    let g: Vec<f64> = mu
        .weights()
        .iter()
        .zip(rho.weights())
        .zip(&state.log_a)
        .map(|((m, r), la)| sigma * (m / r).ln() + eps * la / (2.0 * tau))
        .collect();
    let mean: f64 = g.iter().zip(mu.weights()).map(|(v, m)| v * m).sum();
    Ok(g.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max))
}

/// Tolerances of the JKO cross-check.
pub const L1_TOLERANCE: f64 = 1e-3;
pub const OBJECTIVE_TOLERANCE: f64 = 1e-6;
/// Bound on [`entropic_jko_residual`] for the entropic solver.
pub const STATIONARITY_TOLERANCE: f64 = 1e-6;

/// Comparison of one inner solver with the oracle on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverComparison {
    pub l1: f64,
    /// `|J(μ) − J(μ_oracle)| / |J(μ_oracle)|` under the cell objective.
    pub objective_gap: f64,
    pub converged: bool,
}

impl SolverComparison {
    pub fn passes(&self) -> bool {
        self.l1 <= L1_TOLERANCE && self.objective_gap <= OBJECTIVE_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub seed: u64,
    pub nodes: usize,
    pub tau: f64,
    pub sigma: f64,
    pub newton: SolverComparison,
    pub entropic: SolverComparison,
    /// First-order residual of the entropic solver on its own objective.
    pub entropic_stationarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub instances: Vec<InstanceReport>,
    pub newton_failures: usize,
    pub entropic_failures: usize,
    pub entropic_stationarity_failures: usize,
}

/// Random 1D JKO instance: node count in 6..=32, Gaussian ρ and μ_prev,
/// τ ∈ [0.1, 1), σ ∈ [0.3, 1.5).
pub fn random_instance(seed: u64) -> Result<(DiscreteMeasure, DiscreteMeasure, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(6..=BRUTE_FORCE_CAP);
    let half = rng.gen_range(2.0..5.0);
    let g = std::sync::Arc::new(crate::measures::GridSpec::line(-half, half, n)?);
    let rho = DiscreteMeasure::gaussian(g.clone(), &[rng.gen_range(-1.0..1.0)], rng.gen_range(0.5..2.0))?;
    let prev = DiscreteMeasure::gaussian(g, &[rng.gen_range(-1.5..1.5)], rng.gen_range(0.2..1.5))?;
    let tau = rng.gen_range(0.1..1.0);
    let sigma = rng.gen_range(0.3..1.5);
    Ok((rho, prev, tau, sigma))
}

/// Runs both inner solvers against [`brute_force_jko`] on `count` seeded
/// instances `seed, seed + 1, ...`.
pub fn cross_validate(seed: u64, count: usize) -> Result<CrossValidation> {
    use crate::jko::{jko_step, JkoConfig, JkoSolver};
    let instances: Vec<InstanceReport> = (0..count as u64)
        .into_par_iter()
        .map(|k| -> Result<InstanceReport> {
            let s = seed.wrapping_add(k);
            let (rho, prev, tau, sigma) = random_instance(s)?;
            let oracle = brute_force_jko(&rho, &prev, tau, sigma, &OracleBudget::default())?;
            let j0 = oracle_objective(&oracle, &rho, &prev, tau, sigma)?;
            let compare = |solver: JkoSolver| -> Result<(SolverComparison, DiscreteMeasure, JkoConfig)> {
                let cfg = JkoConfig {
                    solver: Some(solver),
                    max_inner_iters: 200_000,
                    ..JkoConfig::default()
                };
                let r = jko_step(&rho, &prev, tau, sigma, &cfg)?;
                let j = oracle_objective(&r.minimizer, &rho, &prev, tau, sigma)?;
                Ok((
                    SolverComparison {
                        l1: r.minimizer.l1_distance(&oracle),
                        objective_gap: (j - j0).abs() / j0.abs().max(1e-300),
                        converged: r.converged,
                    },
                    r.minimizer,
                    cfg,
                ))
            };
            let (newton, _, _) = compare(JkoSolver::MirrorDescent)?;
            let (entropic, mu_a, cfg_a) = compare(JkoSolver::EntropicScaling)?;
            let eps = cfg_a.final_epsilon(rho.grid());
            let entropic_stationarity = if cfg_a.debias_for(1) {
                f64::NAN
            } else {
                entropic_jko_residual(&mu_a, &rho, &prev, tau, sigma, eps)?
            };
            Ok(InstanceReport {
                seed: s,
                nodes: rho.len(),
                tau,
                sigma,
                newton,
                entropic,
                entropic_stationarity,
            })
        })
        .collect::<Result<_>>()?;
    let newton_failures = instances.iter().filter(|r| !r.newton.passes()).count();
    let entropic_failures = instances.iter().filter(|r| !r.entropic.passes()).count();
    let entropic_stationarity_failures = instances
        .iter()
        .filter(|r| !(r.entropic_stationarity <= STATIONARITY_TOLERANCE))
        .count();
    Ok(CrossValidation {
        instances,
        newton_failures,
        entropic_failures,
        entropic_stationarity_failures,
    })
}
