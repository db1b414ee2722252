//! JSON and text renderings of command results.

use std::fmt::Write as _;
use std::path::Path;

use kktsynth_core::method::CircuitGains;
use kktsynth_core::netlist::{Census, Netlist};
use kktsynth_core::pipeline::SolveReport;
use kktsynth_core::verify::bench::{BenchRecord, BenchSummary};
use kktsynth_core::Problem;
use serde_json::{json, Map, Value};

/// Largest accepted `max |F_circuit - F_dynamics| / γ` in `check`.
pub const EQUIVALENCE_TOL: f64 = 1e-8;

fn gains_json(g: &CircuitGains) -> Value {
    json!({
        "r_gamma": g.r_gamma,
        "c_gamma": g.c_gamma,
        "r_rho": g.r_rho,
        "c_rho": g.c_rho,
        "r_o": g.r_o,
        "r_lim": g.r_lim,
        "gamma": g.gamma(),
        "kappa_p": g.kappa_p(),
        "kappa_i": g.kappa_i(),
    })
}

pub fn solution_json(p: &Problem, r: &SolveReport) -> Value {
    let variables: Map<String, Value> = p
        .var_names
        .iter()
        .cloned()
        .zip(r.variables.iter().map(|v| json!(v)))
        .collect();
    json!({
        "variables": variables,
        "duals": { "lambda": r.lambda, "mu": r.mu },
        "objective": r.objective,
        "settling_time_s": r.settling_time_s,
        "settled": r.settled,
        "kkt": r.kkt,
        "method": r.method.name(),
        "gains": gains_json(&r.gains),
        "constraints": { "inequalities": p.ineq_names, "equalities": p.eq_names },
        "oracle": r.oracle,
        "stats": {
            "accepted_steps": r.accepted_steps,
            "rejected_steps": r.rejected_steps,
            "early_stop_at_s": r.early_stop_at,
            "wall_time_s": r.wall_time_s,
        },
    })
}

fn census_json(c: &Census) -> Value {
    serde_json::to_value(c).expect("census serializes")
}

pub fn census_text(nl: &Netlist, c: &Census, path: &Path) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "netlist: {}", path.display());
    let _ = writeln!(s, "method: {}", nl.method);
    let _ = writeln!(
        s,
        "variables: {}  inequalities: {}  equalities: {}",
        nl.n_vars(),
        nl.n_ineq(),
        nl.n_eq()
    );
    for (name, n) in [
        ("opamps", c.opamps),
        ("resistors", c.resistors),
        ("capacitors", c.capacitors),
        ("diodes", c.diodes),
        ("behavioral", c.behavioral),
        ("components", c.components()),
        ("nodes", c.nodes),
    ] {
        let _ = writeln!(s, "{name}: {n}");
    }
    s
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.digits$}"))
}

pub fn bench_text(records: &[BenchRecord], s: &BenchSummary) -> String {
    let mut out = String::new();
    let settled = records.iter().filter(|r| r.settled).count();
    let kkt = records.iter().filter(|r| r.kkt_pass).count();
    let _ = writeln!(out, "runs: {}  settled: {settled}  kkt_pass: {kkt}", s.runs);
    let _ = writeln!(
        out,
        "settling time ms: mean {}  median {}",
        fmt_opt(s.mean_time_ms, 4),
        fmt_opt(s.median_time_ms, 4)
    );
    let _ = writeln!(
        out,
        "relative error %: mean {}  median {}",
        fmt_opt(s.mean_rel_err_pct, 2),
        fmt_opt(s.median_rel_err_pct, 2)
    );
    for (method, g) in &s.per_method {
        let _ = writeln!(
            out,
            "  {method}: runs {} settled {} mean {} ms, mean error {} %",
            g.runs,
            g.settled,
            fmt_opt(g.mean_time_ms, 4),
            fmt_opt(g.mean_rel_err_pct, 2)
        );
    }
    let _ = writeln!(
        out,
        "gate (mean error <= {} %): {}",
        s.gate_mean_rel_err_pct,
        if s.gate_pass { "pass" } else { "fail" }
    );
    out
}

#[allow(clippy::too_many_arguments)]
pub fn check_json(
    p: &Problem,
    warnings: usize,
    nl: &Netlist,
    census: &Census,
    expected: &Census,
    samples: usize,
    max_scaled_diff: f64,
    equivalent: bool,
) -> Value {
    let degree = |e: &kktsynth_core::Expr| e.degree().map_or(Value::Null, |d| json!(d));
    let max_constraint_degree = p
        .inequalities
        .iter()
        .chain(&p.equalities)
        .filter_map(|e| e.degree())
        .max()
        .unwrap_or(0);
    json!({
        "variables": p.n_vars(),
        "inequalities": p.n_ineq(),
        "equalities": p.n_eq(),
        "objective_degree": degree(&p.objective),
        "max_constraint_degree": max_constraint_degree,
        "warnings": warnings,
        "method": nl.method.name(),
        "census": census_json(census),
        "expected_census": census_json(expected),
        "census_match": census == expected,
        "equivalence": {
            "samples": samples,
            "max_scaled_rhs_diff": max_scaled_diff,
            "tol": EQUIVALENCE_TOL,
            "pass": equivalent,
        },
    })
}
