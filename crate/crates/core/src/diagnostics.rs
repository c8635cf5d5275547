//! Numerical checks of the inequalities and identities behind the schemes:
//! the entropy sandwich, the Fisher/Wasserstein identity of a proximal
//! step, per-step contraction against κ, the KL and W² corollary bounds,
//! and relative smoothness of F along transport plans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::gibbs::{free_energy, kl, proximal_gibbs, reference_measure, relative_fisher, PotentialSpec};
use crate::jko::Anchor;
use crate::measures::DiscreteMeasure;
use crate::schemes::{w2sq_model, RunRow};
use crate::transport::{monotone_plan_1d, w2sq_lp, w2sq_quantiles, Quantile1d, TransportPlan};

/// `σ·KL(μ|μ*) ≤ F^σ(μ) − F^σ(μ*) ≤ σ·KL(μ|Φ[μ])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
}

impl Sandwich {
    /// Both inequalities hold up to `1e-8 + 1e-3·|gap|`.
    pub fn holds(&self) -> bool {
        let tol = sandwich_tolerance(self.mid);
        self.lower <= self.mid + tol && self.mid <= self.upper + tol
    }
}

pub fn sandwich_tolerance(gap: f64) -> f64 {
    1e-8 + 1e-3 * gap.abs()
}

pub fn sandwich_check(
    mu: &DiscreteMeasure,
    f: &dyn Functional,
    sigma: f64,
    u: &PotentialSpec,
    mu_star: &DiscreteMeasure,
) -> Result<Sandwich> {
    let pi = reference_measure(u, mu.grid())?;
    let phi = proximal_gibbs(f, mu, sigma, u)?;
    Ok(Sandwich {
        lower: sigma * kl(mu, mu_star)?,
        mid: free_energy(f, mu, sigma, &pi)? - free_energy(f, mu_star, sigma, &pi)?,
        upper: sigma * kl(mu, &phi)?,
    })
}

/// `|I(μ⁺|ρ) − W²(μ⁺, anchor)/(τσ)²| / max(I, W²/(τσ)², 1e-300)`, zero when
/// both sides vanish. NaN when W² is not available (large 2D grids).
pub fn fisher_wasserstein_residual(
    mu_plus: &DiscreteMeasure,
    anchor: &Anchor,
    rho: &DiscreteMeasure,
    tau: f64,
    sigma: f64,
) -> Result<f64> {
    let w = match anchor {
        Anchor::Measure(m) => w2sq_model(mu_plus, m)?,
        Anchor::Quantile(q) => Some(w2sq_quantiles(&Quantile1d::from_cells(mu_plus)?, q)),
    };
    let Some(w) = w else {
        return Ok(f64::NAN);
    };
    let fisher = relative_fisher(mu_plus, rho)?;
    let rhs = w / (tau * sigma).powi(2);
    if fisher == 0.0 && rhs == 0.0 {
        return Ok(0.0);
    }
    Ok((fisher - rhs).abs() / fisher.max(rhs).max(1e-300))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `gap_{n+1}/gap_n` for every usable n, in order.
    pub ratios: Vec<f64>,
    /// Row index n of each ratio's denominator.
    pub ratio_rows: Vec<usize>,
    /// exp of the least-squares slope of log gap against n.
    pub fitted_rate: f64,
    pub kappa: f64,
    pub kappa_inv: f64,
    pub ratio_tolerance: f64,
    pub violations: usize,
    /// Steps where the gap did not strictly decrease.
    pub increases: usize,
    pub sandwich_violations: usize,
}

/// Contraction and sandwich statistics of a metric stream. Ratios are taken
/// only where the denominator gap exceeds `10·outer_tol`.
pub fn convergence_report(
    rows: &[RunRow],
    sigma: f64,
    outer_tol: f64,
    kappa: f64,
    ratio_tolerance: f64,
) -> Result<ConvergenceReport> {
    let floor = 10.0 * outer_tol;
    let usable: Vec<&RunRow> = rows.iter().take_while(|r| r.gap > floor).collect();
    if usable.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "convergence report needs at least 3 rows above the gap floor {floor:e}, got {}",
            usable.len()
        )));
    }
    let kappa_inv = 1.0 / kappa;
    let mut ratios = Vec::new();
    let mut ratio_rows = Vec::new();
    for w in rows.windows(2) {
        if w[0].gap > floor {
            ratios.push(w[1].gap / w[0].gap);
            ratio_rows.push(w[0].n);
        }
    }
    let violations = ratios.iter().filter(|&&r| r > kappa_inv + ratio_tolerance).count();
    let increases = ratios.iter().filter(|&&r| !(r < 1.0)).count();
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.iter().map(|r| (r.n as f64, r.gap.ln())).unzip();
    let fitted_rate = least_squares_slope(&xs, &ys).exp();
    let sandwich_violations = rows
        .iter()
        .filter(|r| {
            let s = Sandwich {
                lower: sigma * r.kl_to_opt,
                mid: r.gap,
                upper: sigma * r.kl_to_gibbs,
            };
            !s.holds()
        })
        .count();
    Ok(ConvergenceReport {
        ratios,
        ratio_rows,
        fitted_rate,
        kappa,
        kappa_inv,
        ratio_tolerance,
        violations,
        increases,
        sandwich_violations,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub kl_violations: usize,
    pub w2_violations: usize,
    /// max over n of `kl_to_opt − (1/σ)κ^{−n}gap⁰`
    pub kl_worst_excess: f64,
    pub w2_worst_excess: f64,
}

/// `KL(μⁿ|μ*) ≤ κ^{−n}gap⁰/σ + tol` and
/// `W²(μⁿ, μ*) ≤ 2e^{4C_F/σ}/(α_Uσ)·κ^{−n}gap⁰ + tol`. Rows without a W²
/// value are skipped for the second bound.
pub fn corollary_check(
    rows: &[RunRow],
    kappa: f64,
    sigma: f64,
    alpha_u: f64,
    c_f: f64,
    tol: f64,
) -> Result<CorollaryReport> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidParameter("empty metric stream".into()));
    };
    let gap0 = first.gap;
    let tal = 2.0 * (4.0 * c_f / sigma).exp() / (alpha_u * sigma);
    let mut out = CorollaryReport {
        kl_violations: 0,
        w2_violations: 0,
        kl_worst_excess: f64::NEG_INFINITY,
        w2_worst_excess: f64::NEG_INFINITY,
    };
    for r in rows {
        let decay = kappa.powi(-(r.n as i32)) * gap0;
        let e = r.kl_to_opt - decay / sigma;
        out.kl_worst_excess = out.kl_worst_excess.max(e);
        if e > tol {
            out.kl_violations += 1;
        }
        if r.w2sq_to_opt.is_finite() {
            let e = r.w2sq_to_opt - tal * decay;
            out.w2_worst_excess = out.w2_worst_excess.max(e);
            if e > tol {
                out.w2_violations += 1;
            }
        }
    }
    Ok(out)
}

fn exact_plan(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    if mu.dim() == 1 {
        monotone_plan_1d(mu, nu)
    } else {
        w2sq_lp(mu, nu)
    }
}

/// Relative smoothness slack along the exact plan γ from μ to μ′:
/// `L_F'·Σγ|y − x|² − (F(μ′) − F(μ) − Σγ⟨∇_μF(μ)(x), y − x⟩)`. The linear
/// term equals the one built from the barycentric map.
pub fn smoothness_check(f: &dyn Functional, mu: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<f64> {
    mu.ensure_same_grid(mu2)?;
    let plan = exact_plan(mu, mu2)?;
    let grid = mu.grid();
    let d = grid.dim();
    let g = f.wasserstein_gradient_nodes(mu);
    let mut lin = 0.0;
    for e in plan.entries() {
        let (x, y) = (grid.point(e.i), grid.point(e.j));
        let gi = &g[e.i * d..(e.i + 1) * d];
        lin += e.mass * (0..d).map(|k| gi[k] * (y[k] - x[k])).sum::<f64>();
    }
    let l = f.constants().l_f_prime;
    Ok(l * plan.cost() - (f.value(mu2) - f.value(mu) - lin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{nn_l2_loss, zero_functional, Activation, LinearPotential, NnDataset};
    use crate::gibbs::reference_measure;
    use crate::measures::GridSpec;
    use crate::schemes::solve_minimizer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn quad() -> PotentialSpec {
        PotentialSpec::quadratic(1.0, vec![0.0]).unwrap()
    }

    fn synthetic(gaps: &[f64]) -> Vec<RunRow> {
        gaps.iter()
            .enumerate()
            .map(|(n, &g)| RunRow {
                n,
                f_sigma: g,
                gap: g,
                kl_to_opt: g,
                w2sq_to_opt: g,
                kl_to_gibbs: 2.0 * g,
                fisher_to_gibbs: 0.0,
                inner_iters: 1,
                inner_converged: true,
            })
            .collect()
    }

    #[test]
    fn geometric_record() {
        let rows = synthetic(&(0..12).map(|n| 0.5f64.powi(n)).collect::<Vec<_>>());
        let r = convergence_report(&rows, 1.0, 1e-14, 2.0, 0.0).unwrap();
        assert!((r.fitted_rate - 0.5).abs() < 1e-12);
        assert_eq!(r.violations, 0);
        assert_eq!(r.sandwich_violations, 0);
        let r = convergence_report(&rows, 1.0, 1e-14, 4.0, 0.0).unwrap();
        assert_eq!(r.violations, r.ratios.len());
        assert!(convergence_report(&rows[..2], 1.0, 1e-14, 2.0, 0.0).is_err());
    }

    #[test]
    fn floor_rows_are_excluded() {
        let mut gaps: Vec<f64> = (0..8).map(|n| 0.1f64.powi(n)).collect();
        gaps.extend([1e-13, 3e-13, 2e-13]);
        let rows = synthetic(&gaps);
        let r = convergence_report(&rows, 1.0, 1e-12, 10.0, 1e-12).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.increases, 0);
    }

    #[test]
    fn sandwich_degenerate_cases() {
        let g = Arc::new(GridSpec::line(-5.0, 5.0, 81).unwrap());
        let f = LinearPotential::tanh(0.5);
        let star = solve_minimizer(&f, 1.0, &quad(), &g, 1e-14, 100, 0.5).unwrap();
        let s = sandwich_check(&star, &f, 1.0, &quad(), &star).unwrap();
        assert!(s.lower.abs() < 1e-10 && s.mid.abs() < 1e-10 && s.upper.abs() < 1e-10);
        let pi = reference_measure(&quad(), &g).unwrap();
        let mu = DiscreteMeasure::gaussian(g.clone(), &[1.0], 0.5).unwrap();
        let s = sandwich_check(&mu, &zero_functional(), 0.7, &quad(), &pi).unwrap();
        assert!((s.lower - s.mid).abs() < 1e-12 && (s.upper - s.mid).abs() < 1e-12);
        let s = sandwich_check(&mu, &f, 1.0, &quad(), &star).unwrap();
        // linear F: the gap is exactly σ·KL(μ|μ*) and Φ[μ] = μ*
        assert!(s.holds());
        assert!((s.lower - s.mid).abs() < 1e-12 && (s.upper - s.mid).abs() < 1e-12);
    }

    #[test]
    fn fisher_residual_trivial_case() {
        let g = Arc::new(GridSpec::line(-5.0, 5.0, 81).unwrap());
        let pi = reference_measure(&quad(), &g).unwrap();
        let r = fisher_wasserstein_residual(&pi, &Anchor::Measure(pi.clone()), &pi, 0.1, 1.0).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn smoothness_slack_signs() {
        let g = Arc::new(GridSpec::line(-3.0, 3.0, 25).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = LinearPotential::tanh(0.8);
        let mu = DiscreteMeasure::gaussian(g.clone(), &[0.2], 0.7).unwrap();
        assert!(smoothness_check(&f, &mu, &mu).unwrap().abs() < 1e-15);
        assert_eq!(smoothness_check(&zero_functional(), &mu, &mu).unwrap(), 0.0);
        for _ in 0..20 {
            let a: Vec<f64> = (0..25).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..25).map(|_| rng.gen::<f64>()).collect();
            let a = DiscreteMeasure::from_weights(g.clone(), a).unwrap();
            let b = DiscreteMeasure::from_weights(g.clone(), b).unwrap();
            assert!(smoothness_check(&f, &a, &b).unwrap() >= -1e-7);
        }
        let g2 = Arc::new(GridSpec::square(-2.0, 2.0, 6).unwrap());
        let data = NnDataset::new(
            vec![(0.3, vec![1.0]), (-0.2, vec![-0.5]), (0.5, vec![0.7])],
            2.0,
            Activation::Tanh,
        )
        .unwrap();
        let nn = nn_l2_loss(data, 2).unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..36).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..36).map(|_| rng.gen::<f64>()).collect();
            let a = DiscreteMeasure::from_weights(g2.clone(), a).unwrap();
            let b = DiscreteMeasure::from_weights(g2.clone(), b).unwrap();
            assert!(smoothness_check(&nn, &a, &b).unwrap() >= -1e-7);
        }
    }
}
