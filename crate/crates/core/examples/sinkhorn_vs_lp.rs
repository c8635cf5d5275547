//! Entropic transport on a 2D grid: the primal cost of the Sinkhorn plan
//! decreases toward the exact LP value as ε shrinks.

use std::sync::Arc;

use wprox::transport::{sinkhorn, w2sq_lp};
use wprox::{DiscreteMeasure, GridSpec};

fn main() -> wprox::Result<()> {
    let grid = Arc::new(GridSpec::square(-2.0, 2.0, 9)?);
    let a = DiscreteMeasure::gaussian(grid.clone(), &[-0.6, 0.2], 0.3)?;
    let b = DiscreteMeasure::gaussian(grid, &[0.7, -0.4], 0.5)?;
    let lp = w2sq_lp(&a, &b)?;
    println!("exact LP: {:.10} (complementary slackness residual {:?})", lp.cost(), lp.cs_residual());
    println!("{:>8} {:>14} {:>12} {:>8}", "eps", "cost", "excess", "iters");
    for eps in [1.0, 0.3, 0.1, 0.03, 0.01, 0.003] {
        let (plan, state) = sinkhorn(&a, &b, eps, 1e-12, 1_000_000)?;
        println!(
            "{eps:>8} {:>14.10} {:>12.3e} {:>8}",
            plan.cost(),
            plan.cost() - lp.cost(),
            state.iterations
        );
    }
    Ok(())
}
