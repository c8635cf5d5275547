//! Proximal point scheme from a shipped config: per-step gap ratios against
//! the theoretical bound 1/κ, then a τ-sweep of the fitted rate.

use std::path::Path;

use wprox::experiment::{execute, ExperimentConfig, SweepParameter};

fn main() -> wprox::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cfg = ExperimentConfig::load(&dir.join("a1_proximal_point.toml"))?;
    let out = execute(&cfg, &dir)?;
    let kinv = out.summary.assessment.kappa_inv.expect("bounded functional");
    println!("1/kappa = {kinv:.6}");
    println!("{:>4} {:>14} {:>10} {:>12}", "n", "gap", "ratio", "KL(mu|mu*)");
    for w in out.record.rows.windows(2).step_by(5) {
        println!("{:>4} {:>14.6e} {:>10.6} {:>12.6e}", w[1].n, w[1].gap, w[1].gap / w[0].gap, w[1].kl_to_opt);
    }
    for c in &out.summary.assessment.checks {
        println!("{:<20} {:?}", c.name, c.status);
    }

    println!("\n{:>6} {:>12} {:>10}", "tau", "fitted", "1/kappa");
    for tau in [0.4, 0.2, 0.1, 0.05] {
        let c = cfg.with_parameter(SweepParameter::Tau, tau);
        let a = execute(&c, &dir)?.summary.assessment;
        println!("{tau:>6} {:>12.6} {:>10.6}", a.fitted_rate.unwrap(), a.kappa_inv.unwrap());
    }
    Ok(())
}
