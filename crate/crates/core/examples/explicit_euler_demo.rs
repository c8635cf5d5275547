//! Forward Euler on the entropy flow, x ↦ x − τσ∇log(μ/π)(x), next to the
//! prox-linear scheme on the same problem. The explicit step is not
//! guaranteed to converge and oscillates on this example.

use std::sync::Arc;

use wprox::functionals::zero_functional;
use wprox::gibbs::{free_energy, reference_measure, PotentialSpec};
use wprox::schemes::{explicit_euler_demo_step, prox_linear_step, SchemeConfig, SchemeKind};
use wprox::{DiscreteMeasure, GridSpec};

fn main() -> wprox::Result<()> {
    let grid = Arc::new(GridSpec::line(-6.0, 6.0, 201)?);
    let u = PotentialSpec::quadratic(1.0, vec![0.0])?;
    let pi = reference_measure(&u, &grid)?;
    let f = zero_functional();
    let (tau, sigma) = (0.05, 1.0);
    let cfg = SchemeConfig::new(SchemeKind::ProxLinear, tau, sigma);

    let mut euler = DiscreteMeasure::gaussian(grid.clone(), &[2.0], 0.25)?;
    let mut prox = euler.clone();
    println!("{:>4} {:>14} {:>14}", "n", "euler gap", "prox gap");
    for n in 1..=30 {
        euler = explicit_euler_demo_step(&euler, tau, sigma, &u)?.0;
        prox = prox_linear_step(&f, &prox, &cfg, &u)?.result.minimizer;
        if n % 3 == 0 {
            println!(
                "{n:>4} {:>14.6e} {:>14.6e}",
                free_energy(&f, &euler, sigma, &pi)?,
                free_energy(&f, &prox, sigma, &pi)?
            );
        }
    }
    Ok(())
}
