#![allow(dead_code)]

use std::sync::Arc;

use kktsynth_core::frontends::{parse_source, SourceFormat};
use kktsynth_core::method::SolverMethod;
use kktsynth_core::pipeline::{solve, SolveOptions, SolveReport};
use kktsynth_core::sim::SimConfig;
use kktsynth_core::verify::generate::{generate_problem, Density, GeneratorSpec};
use kktsynth_core::{differentiate, normalize, GradientSet, Problem};

pub type Shared = (Arc<Problem>, Arc<GradientSet>);

pub fn share(p: Problem) -> Shared {
    let gs = differentiate(&p);
    (Arc::new(p), Arc::new(gs))
}

pub fn eq5() -> Shared {
    let raw = parse_source(
        include_str!("../../../../problems/eq5.mod"),
        SourceFormat::AmplSubset,
    )
    .unwrap()
    .problem;
    share(normalize(raw).unwrap())
}

pub fn generated(spec: &GeneratorSpec) -> Shared {
    share(generate_problem(spec).problem)
}

/// Small strictly convex QPs with at most 12 constraint rows, mixing
/// linear, ball and equality rows.
pub fn small_qp_specs(count: u64) -> Vec<GeneratorSpec> {
    (0..count)
        .map(|i| GeneratorSpec {
            seed: 500 + i,
            n: 2 + (i as usize * 3) % 9,
            m_lin: (i as usize) % 5,
            m_quad: (i as usize / 2) % 3,
            p_eq: (i as usize / 3) % 3,
            density: if i % 2 == 0 {
                Density::Dense
            } else {
                Density::Sparse
            },
        })
        .collect()
}

/// Tight tolerances and a horizon long enough for every small instance.
pub fn long_run(t_stop: f64) -> SimConfig {
    SimConfig {
        t_stop,
        ..SolveOptions::default_sim(1e3)
    }
}

pub fn run(shared: &Shared, opts: SolveOptions) -> SolveReport {
    solve(shared.0.clone(), shared.1.clone(), &opts)
        .unwrap()
        .report
}

pub fn run_method(shared: &Shared, method: SolverMethod, t_stop: f64) -> SolveReport {
    run(
        shared,
        SolveOptions {
            method,
            sim: Some(long_run(t_stop)),
            ..Default::default()
        },
    )
}

pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
