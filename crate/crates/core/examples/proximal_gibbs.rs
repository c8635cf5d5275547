//! The proximal Gibbs measure Φ[μ] ∝ exp(−δF/δμ(μ)/σ − U), the entropy
//! sandwich σKL(μ|μ*) ≤ F^σ(μ) − F^σ(μ*) ≤ σKL(μ|Φ[μ]), and the LSI constant.

use std::sync::Arc;

use wprox::diagnostics::sandwich_check;
use wprox::functionals::{Functional, InteractionEnergy};
use wprox::gibbs::{lsi_constant, proximal_gibbs, relative_fisher, kl, PotentialSpec};
use wprox::schemes::solve_minimizer;
use wprox::{DiscreteMeasure, GridSpec};

fn main() -> wprox::Result<()> {
    let grid = Arc::new(GridSpec::line(-6.0, 6.0, 241)?);
    let u = PotentialSpec::quadratic(1.0, vec![0.0])?;
    let f = InteractionEnergy::gaussian(1, 0.4, 1.0)?;
    let sigma = 0.5;

    let mu_star = solve_minimizer(&f, sigma, &u, &grid, 1e-15, 20_000, 1.0)?;
    let fixed = proximal_gibbs(&f, &mu_star, sigma, &u)?;
    println!("mu* = Phi[mu*] up to L1 {:.2e}", fixed.l1_distance(&mu_star));

    let c = lsi_constant(u.alpha_u(), f.constants().c_f, sigma)?;
    println!("LSI constant {:.4}, Talagrand factor {:.4}", c.lsi_constant, c.talagrand_factor);

    for (m, v) in [(2.0, 0.25), (-1.0, 2.0), (0.3, 0.05)] {
        let mu = DiscreteMeasure::gaussian(grid.clone(), &[m], v)?;
        let s = sandwich_check(&mu, &f, sigma, &u, &mu_star)?;
        let phi = proximal_gibbs(&f, &mu, sigma, &u)?;
        let lsi_rhs = relative_fisher(&mu, &phi)? / (2.0 * c.lsi_constant);
        println!(
            "N({m}, {v}): {:.6} <= gap {:.6} <= {:.6} (holds: {}); KL(mu|Phi) {:.6} <= I/(2 lambda) {:.6}",
            s.lower,
            s.mid,
            s.upper,
            s.holds(),
            kl(&mu, &phi)?,
            lsi_rhs
        );
    }
    Ok(())
}
