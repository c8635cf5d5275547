//! Closed-form Gaussian JKO step toward π = N(0, 1/α) against the grid step.

use std::sync::Arc;

use wprox::gibbs::{reference_measure, PotentialSpec};
use wprox::jko::{jko_step, JkoConfig};
use wprox::oracles::gaussian_jko_oracle_1d;
use wprox::{DiscreteMeasure, GridSpec};

fn main() -> wprox::Result<()> {
    let grid = Arc::new(GridSpec::line(-8.0, 8.0, 801)?);
    let alpha = 1.0;
    let pi = reference_measure(&PotentialSpec::quadratic(alpha, vec![0.0])?, &grid)?;
    let mut mu = DiscreteMeasure::gaussian(grid, &[1.0], 1.0)?;
    let (mut m, mut v) = (1.0, 1.0);
    let (tau, sigma) = (0.5, 1.0);
    println!("{:>4} {:>12} {:>12} {:>12} {:>12}", "n", "mean", "oracle", "variance", "oracle");
    for n in 1..=5 {
        mu = jko_step(&pi, &mu, tau, sigma, &JkoConfig::default())?.minimizer;
        (m, v) = gaussian_jko_oracle_1d(m, v, tau, sigma, alpha)?;
        println!("{n:>4} {:>12.8} {m:>12.8} {:>12.8} {v:>12.8}", mu.mean()[0], mu.variance());
    }
    Ok(())
}
