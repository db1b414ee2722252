use std::sync::Arc;

use kktsynth_core::expr::{Expr, Func};
use kktsynth_core::frontends::{parse_source, SourceFormat};
use kktsynth_core::method::{compile, CircuitGains, SolverMethod};
use kktsynth_core::netlist::{
    component_census, emit_spice, emit_spice_string, expected_census, synthesize, IdealCircuit,
    SynthError,
};
use kktsynth_core::sim::{integrate, OdeSystem, SimConfig};
use kktsynth_core::verify::generate::{generate_problem, Density, GeneratorSpec};
use kktsynth_core::{differentiate, normalize, GradientSet, Problem, RawProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eq5() -> Problem {
    let raw = parse_source(
        include_str!("../../../problems/eq5.mod"),
        SourceFormat::AmplSubset,
    )
    .unwrap()
    .problem;
    normalize(raw).unwrap()
}

/// Objective with a transcendental term and a bilinear equality.
fn nonlinear() -> Problem {
    let x = Expr::var;
    let f = Expr::pow(x(0) - Expr::constant(0.3), 2)
        + Expr::pow(x(1), 2)
        + Expr::scaled(0.5, Expr::pow(x(2), 2))
        + Expr::scaled(0.2, Expr::func(Func::Sin, x(0)));
    let mut raw = RawProblem::new(vec!["a".into(), "b".into(), "c".into()], f);
    raw.add_inequality(
        "disk",
        Expr::constant(2.0) - Expr::pow(x(0), 2) - Expr::pow(x(1), 2),
    );
    raw.add_inequality("cut", x(0) + x(1) - Expr::constant(0.5));
    raw.add_equality("bil", x(0) * x(2) - Expr::constant(0.1) + x(1));
    normalize(raw).unwrap()
}

/// Small instances: at most 5 variables and 6 constraints.
fn small_suite() -> Vec<Problem> {
    let mut out = vec![eq5(), nonlinear()];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..24 {
        let n = rng.random_range(1..=5);
        let m_lin = rng.random_range(0..=3);
        let m_quad = rng.random_range(0..=2);
        let p_eq = rng.random_range(0..=(6 - m_lin - m_quad).min(n.min(2)));
        let density = if seed % 2 == 0 {
            Density::Dense
        } else {
            Density::Sparse
        };
        let spec = GeneratorSpec {
            seed,
            n,
            m_lin,
            m_quad,
            p_eq,
            density,
        };
        out.push(generate_problem(&spec).problem);
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn ideal_reduction_matches_dynamics_at_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (pi, p) in small_suite().into_iter().enumerate() {
        let gs = differentiate(&p);
        let (p, gs) = (Arc::new(p), Arc::new(gs));
        for method in SolverMethod::ALL {
            let gains = CircuitGains::default();
            let nl = synthesize(&p, &gs, method, gains, None).unwrap();
            let ideal = IdealCircuit::from_netlist(&nl).unwrap();
            let ds = compile(p.clone(), gs.clone(), method, gains, false).unwrap();
            assert_eq!(ideal.dim(), ds.dim(), "problem {pi} {method}");
            let mut a = vec![0.0; ds.dim()];
            let mut b = vec![0.0; ds.dim()];
            for _ in 0..50 {
                let s: Vec<f64> = (0..ds.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                ds.rhs(&s, &mut a).unwrap();
                ideal.derivative(&s, &mut b).unwrap();
                // Compared per primal time constant: raw derivatives reach
                // 1e8 V/s here, where one ulp is already 1.5e-8.
                let d = max_abs_diff(&a, &b) / ds.gamma();
                assert!(d <= 1e-8, "problem {pi} {method}: difference {d}");
            }
        }
    }
}

#[test]
fn settled_points_of_circuit_and_dynamics_agree() {
    let cfg = SimConfig {
        t_stop: 0.1,
        rel_tol: 1e-9,
        abs_tol: 1e-12,
        ..SimConfig::default()
    };
    for (pi, p) in small_suite().into_iter().enumerate() {
        let gs = differentiate(&p);
        let (p, gs) = (Arc::new(p), Arc::new(gs));
        for method in [SolverMethod::AugmentedLagrangian, SolverMethod::PrimalDual] {
            let gains = CircuitGains::default();
            let nl = synthesize(&p, &gs, method, gains, None).unwrap();
            let ideal = IdealCircuit::from_netlist(&nl).unwrap();
            let ds = compile(p.clone(), gs.clone(), method, gains, false).unwrap();
            let s0 = vec![0.0; ds.dim()];
            let a = integrate(&ds, &s0, &cfg).unwrap();
            let b = integrate(&ideal, &s0, &cfg).unwrap();
            let n = p.n_vars();
            let d = max_abs_diff(&a.final_state()[..n], &b.final_state()[..n]);
            assert!(d <= 1e-4, "problem {pi} {method}: {d}");
            assert_eq!(ideal.settle_components(), n);
        }
    }
}

#[test]
fn census_matches_closed_form_for_every_small_instance() {
    for p in small_suite() {
        let gs = differentiate(&p);
        for method in SolverMethod::ALL {
            let nl = synthesize(&p, &gs, method, CircuitGains::default(), None).unwrap();
            let c = component_census(&nl);
            assert_eq!(c, expected_census(&p, &gs, method).unwrap());
            assert_eq!(c.nodes, nl.node_count());
            assert_eq!(c.diodes, p.n_ineq());
            let dual_caps = if method == SolverMethod::Penalty {
                0
            } else {
                p.n_ineq() + p.n_eq()
            };
            assert_eq!(c.capacitors, p.n_vars() + dual_caps);
        }
    }
}

#[test]
fn eq5_stage_counts() {
    let p = eq5();
    let gs = differentiate(&p);
    let nl = synthesize(
        &p,
        &gs,
        SolverMethod::AugmentedLagrangian,
        CircuitGains::default(),
        None,
    )
    .unwrap();
    let count = |pre: &str| {
        nl.components
            .iter()
            .filter(|c| {
                let n = c.name.to_string();
                n.starts_with(pre) && n[pre.len()..].starts_with(|ch: char| ch.is_ascii_digit())
            })
            .count()
    };
    assert_eq!(count("XI"), 2);
    assert_eq!(count("XC") + count("XE"), 5);
    assert_eq!(count("XD"), 4);
    assert_eq!(component_census(&nl).diodes, 4);
}

#[test]
fn single_variable_unconstrained() {
    let raw = RawProblem::new(
        vec!["x".into()],
        Expr::scaled(0.5, Expr::pow(Expr::var(0), 2)),
    );
    let p = normalize(raw).unwrap();
    let gs = differentiate(&p);
    for method in SolverMethod::ALL {
        let nl = synthesize(&p, &gs, method, CircuitGains::default(), None).unwrap();
        let c = component_census(&nl);
        assert_eq!(
            (c.opamps, c.behavioral, c.capacitors, c.diodes),
            (2, 1, 1, 0)
        );
    }
}

#[test]
fn golden_eq5_netlist() {
    let p = eq5();
    let gs = differentiate(&p);
    let nl = synthesize(
        &p,
        &gs,
        SolverMethod::AugmentedLagrangian,
        CircuitGains::default(),
        None,
    )
    .unwrap();
    let text = emit_spice_string(&nl);
    assert_eq!(text, include_str!("../../../golden/eq5_auglag.cir"));
    assert_eq!(text, emit_spice_string(&nl));
}

#[test]
fn emission_rules() {
    let p = eq5();
    let gs: GradientSet = differentiate(&p);
    let nl = synthesize(
        &p,
        &gs,
        SolverMethod::PrimalDual,
        CircuitGains::default(),
        None,
    )
    .unwrap();
    let mut streamed = Vec::new();
    emit_spice(&nl, &mut streamed).unwrap();
    let text = String::from_utf8(streamed).unwrap();
    assert_eq!(text, emit_spice_string(&nl));
    assert!(text.contains("\nRg1 gf1 s1 1e4\n"));
    assert!(text.contains("\nCg1 s1 vn1 1e-7\n"));
    assert!(text.contains("\nD1 lam1 d1 DIDEAL\n"));
    assert!(text.contains("\n.TRAN 2e-6 2e-2 UIC\n"));
    assert!(text.contains("\n.SAVE v(v1)\n.SAVE v(v2)\n.END\n"));
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.iter().filter(|l| l.starts_with("Crc")).count(), 4);
    assert!(lines.iter().all(|l| !l.starts_with("Rrc")));
}

#[test]
fn degree_three_constraint_is_rejected() {
    let x = Expr::var;
    let p = Problem {
        var_names: vec!["x".into()],
        objective: Expr::pow(x(0), 2),
        inequalities: vec![Expr::pow(x(0), 3)],
        ineq_names: vec!["cube".into()],
        equalities: vec![],
        eq_names: vec![],
        source_bounds: None,
    };
    let gs = differentiate(&p);
    let err = synthesize(
        &p,
        &gs,
        SolverMethod::Penalty,
        CircuitGains::default(),
        None,
    )
    .unwrap_err();
    assert!(
        matches!(err, SynthError::Degree { ref name, .. } if name == "cube"),
        "{err}"
    );
}
