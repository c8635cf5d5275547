//! One JKO step argmin σKL(μ|ρ) + W²(μ, μ_prev)/(2τ) with both inner
//! solvers, compared with the brute-force oracle.

use std::sync::Arc;

use wprox::jko::{jko_step, JkoConfig, JkoSolver};
use wprox::oracles::{brute_force_jko, entropic_jko_residual, oracle_objective, OracleBudget};
use wprox::{DiscreteMeasure, GridSpec};

fn main() -> wprox::Result<()> {
    let grid = Arc::new(GridSpec::line(-3.0, 3.0, 24)?);
    let rho = DiscreteMeasure::gaussian(grid.clone(), &[0.0], 1.0)?;
    let prev = DiscreteMeasure::gaussian(grid, &[1.2], 0.3)?;
    let (tau, sigma) = (0.4, 0.8);

    let oracle = brute_force_jko(&rho, &prev, tau, sigma, &OracleBudget::default())?;
    let j0 = oracle_objective(&oracle, &rho, &prev, tau, sigma)?;
    println!("oracle: objective {j0:.12}, mean {:.6}", oracle.mean()[0]);

    for solver in [JkoSolver::MirrorDescent, JkoSolver::EntropicScaling] {
        let cfg = JkoConfig {
            solver: Some(solver),
            ..JkoConfig::default()
        };
        let r = jko_step(&rho, &prev, tau, sigma, &cfg)?;
        let j = oracle_objective(&r.minimizer, &rho, &prev, tau, sigma)?;
        println!(
            "{solver:?}: {} iterations, converged {}, L1 to oracle {:.2e}, cell objective {j:.12}",
            r.iterations,
            r.converged,
            r.minimizer.l1_distance(&oracle)
        );
        if solver == JkoSolver::EntropicScaling {
            let eps = cfg.final_epsilon(rho.grid());
            let res = entropic_jko_residual(&r.minimizer, &rho, &prev, tau, sigma, eps)?;
            println!("  stationarity on its own entropic objective (eps = {eps:.4}): {res:.2e}");
        }
    }
    Ok(())
}
