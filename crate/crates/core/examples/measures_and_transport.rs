//! Grids, measures and the three W² readings on a line: atomic (monotone
//! plan), exact LP, and cells (weights spread uniformly over node cells).

use std::sync::Arc;

use wprox::measures::pushforward;
use wprox::transport::{monotone_plan_1d, w2sq_1d, w2sq_cells, w2sq_lp};
use wprox::{DiscreteMeasure, GridSpec, PointMap};

fn main() -> wprox::Result<()> {
    let grid = Arc::new(GridSpec::line(-4.0, 4.0, 81)?);
    let mu = DiscreteMeasure::gaussian(grid.clone(), &[-1.0], 0.5)?;
    let nu = DiscreteMeasure::gaussian(grid.clone(), &[1.5], 0.8)?;
    println!("mu: mean {:.4}, variance {:.4}", mu.mean()[0], mu.variance());
    println!("nu: mean {:.4}, variance {:.4}", nu.mean()[0], nu.variance());

    let atomic = w2sq_1d(&mu, &nu)?;
    let lp = w2sq_lp(&mu, &nu)?;
    let cells = w2sq_cells(&mu, &nu)?;
    println!("W2^2 atomic {atomic:.10}  LP {:.10}  cells {cells:.10}", lp.cost());
    // Gaussians: (m1 - m2)^2 + (s1 - s2)^2
    let closed = 2.5f64.powi(2) + (0.5f64.sqrt() - 0.8f64.sqrt()).powi(2);
    println!("continuous Gaussian value {closed:.10}");

    let plan = monotone_plan_1d(&mu, &nu)?;
    println!("monotone plan: {} entries, marginal residual {:.2e}", plan.entries().len(), plan.marginal_residual());

    // T(x) = x + 2.5 carries mu onto (roughly) the shifted Gaussian
    let shift = PointMap::from_fn(&grid, |x| vec![x[0] + 2.5])?;
    let pushed = pushforward(&mu, &shift)?;
    println!(
        "pushforward by x + 2.5: mean {:.4}, clamped mass {:.2e}",
        pushed.measure.mean()[0],
        pushed.clamped_mass
    );
    Ok(())
}
