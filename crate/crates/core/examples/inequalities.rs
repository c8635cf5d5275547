//! Checks along one proximal point run: the Fisher = Wasserstein identity
//! of each step, the KL and W² corollary bounds, and relative smoothness.

use std::sync::Arc;

use wprox::diagnostics::{corollary_check, smoothness_check};
use wprox::functionals::{Functional, LinearPotential};
use wprox::gibbs::PotentialSpec;
use wprox::schemes::{rate_bound, run, solve_minimizer, SchemeConfig, SchemeKind};
use wprox::{DiscreteMeasure, GridSpec};

fn main() -> wprox::Result<()> {
    let u = PotentialSpec::quadratic(1.0, vec![0.0])?;
    let f = LinearPotential::tanh(0.5);
    let c = f.constants();
    let (tau, sigma) = (0.1, 1.0);
    let kappa = rate_bound(SchemeKind::ProximalPoint, tau, sigma, 1.0, c.c_f, c.l_f_prime)?;

    for nodes in [101, 201, 401] {
        let grid = Arc::new(GridSpec::line(-6.0, 6.0, nodes)?);
        let mu0 = DiscreteMeasure::gaussian(grid.clone(), &[2.0], 0.25)?;
        let star = solve_minimizer(&f, sigma, &u, &grid, 1e-15, 20_000, 1.0)?;
        let mut cfg = SchemeConfig::new(SchemeKind::ProximalPoint, tau, sigma);
        cfg.max_outer_iters = 30;
        let rec = run(&f, &mu0, &cfg, &u, &star)?;
        let fw: Vec<f64> = rec.steps.iter().map(|s| s.fw_residual).collect();
        let mean = fw.iter().sum::<f64>() / fw.len() as f64;
        let cor = corollary_check(&rec.rows, kappa, sigma, 1.0, c.c_f, 1e-6)?;
        println!(
            "{nodes:>4} nodes: Fisher/W2 residual mean {mean:.3e}; corollary KL excess {:.2e}, W2 excess {:.2e}",
            cor.kl_worst_excess, cor.w2_worst_excess
        );
    }

    let grid = Arc::new(GridSpec::square(-2.0, 2.0, 7)?);
    let g = wprox::functionals::InteractionEnergy::gaussian(2, 0.6, 0.9)?;
    let a = DiscreteMeasure::gaussian(grid.clone(), &[0.5, 0.0], 0.4)?;
    let b = DiscreteMeasure::gaussian(grid, &[-0.5, 0.3], 0.6)?;
    println!("relative smoothness slack in 2D: {:.4e} (>= 0)", smoothness_check(&g, &a, &b)?);
    Ok(())
}
