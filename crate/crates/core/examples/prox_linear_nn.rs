//! Mean-field two-layer network trained by the prox-linear scheme on a 2D
//! parameter grid x = (w, b).

use std::path::Path;

use wprox::experiment::{execute, ExperimentConfig, Problem};

fn main() -> wprox::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cfg = ExperimentConfig::load(&dir.join("nn_2d.toml"))?;
    let problem = Problem::build(&cfg, &dir)?;
    let c = problem.functional.constants();
    println!("{}: C_F {:.3}, L_F' {:.3}", problem.functional.name(), c.c_f, c.l_f_prime);

    let out = execute(&cfg, &dir)?;
    for r in out.record.rows.iter().step_by(20) {
        println!("n {:>4}  gap {:.3e}  kl_to_gibbs {:.3e}  inner {}", r.n, r.gap, r.kl_to_gibbs, r.inner_iters);
    }
    let last = out.record.rows.last().unwrap();
    println!("final: n {} gap {:.3e}, {:.1} s", last.n, last.gap, out.record.wall_time);
    println!("sandwich violations: {}", out.summary.assessment.sandwich_violations);

    let fin = &out.record.final_measure;
    let m = fin.mean();
    println!("loss F(mu) {:.6}, mean parameter (w, b) = ({:.4}, {:.4})", problem.functional.value(fin), m[0], m[1]);
    Ok(())
}
