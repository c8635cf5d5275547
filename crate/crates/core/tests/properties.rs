use std::sync::Arc;

use proptest::prelude::*;

use wprox::diagnostics::sandwich_check;
use wprox::experiment::{metrics_csv, read_metrics_csv};
use wprox::functionals::{Functional, InteractionEnergy, LinearPotential};
use wprox::gibbs::{kl, proximal_gibbs, reference_measure, PotentialSpec};
use wprox::jko::{jko_step, JkoConfig, JkoSolver};
use wprox::measures::pushforward;
use wprox::schemes::{rate_bound, solve_minimizer, RunRow, SchemeKind};
use wprox::transport::{w2sq_1d, w2sq_cells, w2sq_lp};
use wprox::{DiscreteMeasure, GridSpec, PointMap};

fn line(n: usize) -> Arc<GridSpec> {
    Arc::new(GridSpec::line(-3.0, 3.0, n).unwrap())
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n)
}

fn pair(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (weights(n), weights(n)))
}

fn quad() -> PotentialSpec {
    PotentialSpec::quadratic(1.0, vec![0.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn w2_is_a_symmetric_nonnegative_lp_value((a, b) in pair(2..24)) {
        let g = line(a.len());
        let a = DiscreteMeasure::from_weights(g.clone(), a).unwrap();
        let b = DiscreteMeasure::from_weights(g, b).unwrap();
        let ab = w2sq_1d(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - w2sq_1d(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ab - w2sq_lp(&a, &b).unwrap().cost()).abs() < 1e-9);
        prop_assert!(w2sq_1d(&a, &a).unwrap() < 1e-15);
        prop_assert!(w2sq_cells(&a, &a).unwrap() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_on_the_diagonal((a, b) in pair(2..30)) {
        let g = line(a.len());
        let a = DiscreteMeasure::from_weights(g.clone(), a).unwrap();
        let b = DiscreteMeasure::from_weights(g, b).unwrap();
        prop_assert!(kl(&a, &b).unwrap() >= -1e-15);
        prop_assert!(kl(&a, &a).unwrap().abs() < 1e-15);
    }

    #[test]
    fn jko_minimizer_is_a_probability_vector(
        (rho, prev) in pair(4..40),
        tau in 0.05f64..2.0,
        sigma in 0.2f64..2.0,
        entropic in any::<bool>(),
    ) {
        let g = line(rho.len());
        let rho = DiscreteMeasure::from_weights(g.clone(), rho).unwrap();
        let prev = DiscreteMeasure::from_weights(g, prev).unwrap();
        let cfg = JkoConfig {
            solver: Some(if entropic { JkoSolver::EntropicScaling } else { JkoSolver::MirrorDescent }),
            ..JkoConfig::default()
        };
        let r = jko_step(&rho, &prev, tau, sigma, &cfg).unwrap();
        let w = r.minimizer.weights();
        prop_assert!(w.iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(r.converged);
    }

    #[test]
    fn jko_step_does_not_increase_the_entropy_term(
        (rho, prev) in pair(4..32),
        tau in 0.05f64..2.0,
        sigma in 0.2f64..2.0,
    ) {
        // J(μ⁺) ≤ J(μ_prev) = σ KL(μ_prev | ρ)
        let g = line(rho.len());
        let rho = DiscreteMeasure::from_weights(g.clone(), rho).unwrap();
        let prev = DiscreteMeasure::from_weights(g, prev).unwrap();
        let r = jko_step(&rho, &prev, tau, sigma, &JkoConfig::default()).unwrap();
        let start = sigma * kl(&prev, &rho).unwrap();
        prop_assert!(r.objective <= start + 1e-12 * (1.0 + start));
        prop_assert!(sigma * kl(&r.minimizer, &rho).unwrap() <= start + 1e-9);
    }

    #[test]
    fn proximal_gibbs_is_normalized_and_tilted(w in weights(25), sigma in 0.2f64..3.0, amp in -1.0f64..1.0) {
        let g = line(25);
        let mu = DiscreteMeasure::from_weights(g.clone(), w).unwrap();
        let f = InteractionEnergy::gaussian(1, amp.abs(), 0.8).unwrap();
        let u = quad();
        let phi = proximal_gibbs(&f, &mu, sigma, &u).unwrap();
        prop_assert!((phi.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = f.flat_derivative_nodes(&mu);
        let logit: Vec<f64> = (0..25).map(|i| phi.weights()[i].ln() + d[i] / sigma + u.eval(g.point(i))).collect();
        let spread = logit.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - logit.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        prop_assert!(spread < 1e-9);
    }

    #[test]
    fn sandwich_holds_for_random_measures(w in weights(41), sigma in 0.3f64..2.0, amp in 0.0f64..1.0) {
        let g = Arc::new(GridSpec::line(-5.0, 5.0, 41).unwrap());
        let mu = DiscreteMeasure::from_weights(g.clone(), w).unwrap();
        let u = quad();
        for f in [
            Box::new(LinearPotential::tanh(amp)) as Box<dyn Functional>,
            Box::new(InteractionEnergy::gaussian(1, amp, 1.0).unwrap()),
        ] {
            let star = solve_minimizer(f.as_ref(), sigma, &u, &g, 1e-15, 20_000, 1.0).unwrap();
            let s = sandwich_check(&mu, f.as_ref(), sigma, &u, &star).unwrap();
            prop_assert!(s.holds(), "{s:?}");
        }
    }

    #[test]
    fn pushforward_keeps_mass(w in weights(30), shift in -4.0f64..4.0, scale in 0.1f64..2.0) {
        let g = line(30);
        let mu = DiscreteMeasure::from_weights(g.clone(), w).unwrap();
        let map = PointMap::from_fn(&g, |x| vec![scale * x[0] + shift]).unwrap();
        let p = pushforward(&mu, &map).unwrap();
        prop_assert!((p.measure.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.clamped_mass >= 0.0 && p.clamped_mass <= 1.0 + 1e-12);
    }

    #[test]
    fn rate_bound_grows_with_tau(t1 in 0.01f64..1.0, t2 in 0.01f64..1.0, c_f in 0.0f64..1.0) {
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let a = rate_bound(SchemeKind::ProximalPoint, lo, 1.0, 1.0, c_f, 0.3).unwrap();
        let b = rate_bound(SchemeKind::ProximalPoint, hi, 1.0, 1.0, c_f, 0.3).unwrap();
        prop_assert!(a > 1.0 && b >= a);
    }

    #[test]
    fn metrics_csv_round_trips(gaps in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
        let rows: Vec<RunRow> = gaps
            .iter()
            .enumerate()
            .map(|(n, &g)| RunRow {
                n,
                f_sigma: -g,
                gap: g,
                kl_to_opt: g / 3.0,
                w2sq_to_opt: f64::NAN,
                kl_to_gibbs: g * 1.0000001,
                fisher_to_gibbs: g.abs().sqrt(),
                inner_iters: n * 7,
                inner_converged: n % 2 == 0,
            })
            .collect();
        let back = read_metrics_csv(metrics_csv(&rows).as_bytes()).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            prop_assert_eq!(a.gap.to_bits(), b.gap.to_bits());
            prop_assert_eq!(a.f_sigma.to_bits(), b.f_sigma.to_bits());
            prop_assert_eq!(a.kl_to_gibbs.to_bits(), b.kl_to_gibbs.to_bits());
            prop_assert_eq!(a.inner_converged, b.inner_converged);
        }
    }
}

#[test]
fn reference_is_the_gibbs_measure_of_zero() {
    let g = line(50);
    let u = quad();
    let pi = reference_measure(&u, &g).unwrap();
    let f = wprox::functionals::zero_functional();
    let phi = proximal_gibbs(&f, &pi, 0.7, &u).unwrap();
    assert!(phi.l1_distance(&pi) < 1e-14);
}
