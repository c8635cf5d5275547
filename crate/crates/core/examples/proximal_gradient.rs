//! Proximal gradient scheme for a Gaussian interaction energy: explicit
//! pushforward by x − τ∇_μF(μ), then a JKO step toward π.

use std::sync::Arc;

use wprox::functionals::{Functional, InteractionEnergy};
use wprox::gibbs::PotentialSpec;
use wprox::schemes::{rate_bound, run, solve_minimizer, SchemeConfig, SchemeKind};
use wprox::{DiscreteMeasure, GridSpec};

fn main() -> wprox::Result<()> {
    let grid = Arc::new(GridSpec::line(-6.0, 6.0, 201)?);
    let u = PotentialSpec::quadratic(1.0, vec![0.0])?;
    let f = InteractionEnergy::gaussian(1, 0.5, 1.0)?;
    let (tau, sigma) = (0.2, 1.0);
    let c = f.constants();
    let kappa = rate_bound(SchemeKind::ProximalGradient, tau, sigma, u.alpha_u(), c.c_f, c.l_f_prime)?;
    println!("tau L_F' = {:.3}, kappa = {kappa:.6}", tau * c.l_f_prime);

    let mu0 = DiscreteMeasure::gaussian(grid.clone(), &[-2.5], 0.2)?;
    let star = solve_minimizer(&f, sigma, &u, &grid, 1e-15, 20_000, 1.0)?;
    let mut cfg = SchemeConfig::new(SchemeKind::ProximalGradient, tau, sigma);
    cfg.max_outer_iters = 40;
    let rec = run(&f, &mu0, &cfg, &u, &star)?;
    for (r, s) in rec.rows.iter().skip(1).zip(&rec.steps).step_by(5) {
        println!(
            "n {:>3}  gap {:.4e}  W2^2 to mu* {:.4e}  clamped {:.1e}  Fisher/W2 residual {:.2e}",
            r.n, r.gap, r.w2sq_to_opt, s.clamped_mass, s.fw_residual
        );
    }
    let worst = rec.rows.windows(2).map(|w| w[1].gap / w[0].gap).fold(0.0, f64::max);
    println!("worst ratio {worst:.4} vs 1/kappa {:.4}", 1.0 / kappa);
    Ok(())
}
