use std::sync::Arc;

use kktsynth_core::frontends::{parse_source, SourceFormat};
use kktsynth_core::method::SolverMethod;
use kktsynth_core::pipeline::{solve, SolveOptions};
use kktsynth_core::{differentiate, normalize};

fn eq5(
    format: SourceFormat,
    text: &str,
) -> (Arc<kktsynth_core::Problem>, Arc<kktsynth_core::GradientSet>) {
    let raw = parse_source(text, format).unwrap().problem;
    let p = normalize(raw).unwrap();
    let gs = differentiate(&p);
    (Arc::new(p), Arc::new(gs))
}

#[test]
fn eq5_settles_for_both_dual_methods() {
    let (p, gs) = eq5(
        SourceFormat::AmplSubset,
        include_str!("../../../problems/eq5.mod"),
    );
    for method in [SolverMethod::AugmentedLagrangian, SolverMethod::PrimalDual] {
        let opts = SolveOptions {
            method,
            ..Default::default()
        };
        let r = solve(p.clone(), gs.clone(), &opts).unwrap().report;
        eprintln!(
            "{method}: {:?} f={} mu={:?} t={} settled={} kkt={:?}",
            r.variables, r.objective, r.mu, r.settling_time_s, r.settled, r.kkt
        );
        assert!(r.settled);
        assert!((r.variables[0] - 0.7625).abs() < 1e-4);
        assert!((r.variables[1] - 0.475).abs() < 1e-4);
        assert!((r.objective - 8.371875).abs() < 1e-4);
        assert!((r.mu[0] + 4.275).abs() < 1e-4);
        assert!(r.kkt.pass, "{:?}", r.kkt);
    }
}

#[test]
fn mps_and_ampl_sources_agree() {
    let (a, _) = eq5(
        SourceFormat::AmplSubset,
        include_str!("../../../problems/eq5.mod"),
    );
    let (b, _) = eq5(SourceFormat::Mps, include_str!("../../../problems/eq5.mps"));
    assert_eq!(
        (a.n_vars(), a.n_ineq(), a.n_eq()),
        (b.n_vars(), b.n_ineq(), b.n_eq())
    );
    for x in [[0.0, 0.0], [0.3, -1.2], [2.0, 0.7]] {
        assert!((a.objective_value(&x).unwrap() - b.objective_value(&x).unwrap()).abs() < 1e-12);
        for (u, v) in a
            .ineq_values(&x)
            .unwrap()
            .iter()
            .zip(b.ineq_values(&x).unwrap())
        {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((a.eq_values(&x).unwrap()[0] - b.eq_values(&x).unwrap()[0]).abs() < 1e-12);
    }
}
