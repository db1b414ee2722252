//! Compile, integrate, settle and certify in one call.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::method::{compile, CircuitGains, DynamicalSystem, MethodError, SolverMethod};
use crate::problem::{GradientSet, Problem};
use crate::sim::{integrate, settle_analysis, SimConfig, SimError, Trajectory};
use crate::verify::kkt::{kkt_residuals_with_tol, KktReport, DEFAULT_KKT_TOL};
use crate::verify::oracle::oracle_solve;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub method: SolverMethod,
    pub gains: CircuitGains,
    /// `None` uses [`SimConfig::for_gamma`] tightened to
    /// [`SOLVE_REL_TOL`] / [`SOLVE_ABS_TOL`].
    pub sim: Option<SimConfig>,
    pub anti_windup: bool,
    pub v0: Option<Vec<f64>>,
    pub oracle_check: bool,
    pub kkt_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: SolverMethod::AugmentedLagrangian,
            gains: CircuitGains::default(),
            sim: None,
            anti_windup: true,
            v0: None,
            oracle_check: false,
            kkt_tol: DEFAULT_KKT_TOL,
        }
    }
}

/// Integration tolerances used by [`solve`] unless overridden. At the
/// plain simulator defaults the trajectory hovers around the equilibrium
/// with stationarity residuals near 1e-5, too coarse to certify at 1e-6.
pub const SOLVE_REL_TOL: f64 = 1e-9;
pub const SOLVE_ABS_TOL: f64 = 1e-12;

impl SolveOptions {
    pub fn default_sim(gamma: f64) -> SimConfig {
        SimConfig {
            rel_tol: SOLVE_REL_TOL,
            abs_tol: SOLVE_ABS_TOL,
            ..SimConfig::for_gamma(gamma)
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        self.sim
            .clone()
            .unwrap_or_else(|| Self::default_sim(self.gains.gamma()))
    }
}

/// Comparison of the settled point with the enumeration oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub f_star: f64,
    pub x_star: Vec<f64>,
    pub rel_error_pct: f64,
    pub max_abs_x_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum OracleOutcome {
    Solved(OracleComparison),
    Unavailable { unavailable: String },
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub method: SolverMethod,
    pub gains: CircuitGains,
    pub variables: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub objective: f64,
    pub settling_time_s: f64,
    pub settled: bool,
    pub kkt: KktReport,
    pub oracle: Option<OracleOutcome>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub early_stop_at: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("evaluation at the settled point failed: {0}")]
    Eval(#[from] EvalError),
}

/// `|f - f*| / max(1, |f*|)` in percent.
pub fn rel_error_pct(f: f64, f_star: f64) -> f64 {
    (f - f_star).abs() / f_star.abs().max(1.0) * 100.0
}

/// Output of [`solve`]: the report plus the objects it was derived from.
pub struct SolveRun {
    pub report: SolveReport,
    pub system: DynamicalSystem,
    pub trajectory: Trajectory,
}

pub fn solve(
    problem: Arc<Problem>,
    gradients: Arc<GradientSet>,
    opts: &SolveOptions,
) -> Result<SolveRun, SolveError> {
    let start = Instant::now();
    let ds = compile(
        problem.clone(),
        gradients.clone(),
        opts.method,
        opts.gains,
        opts.anti_windup,
    )?;
    let s0 = ds.initial_state(opts.v0.as_deref())?;
    let cfg = opts.sim_config();
    let tr = integrate(&ds, &s0, &cfg)?;
    let settle = settle_analysis(&tr, &ds, &cfg);
    let state = tr.final_state();
    let n = ds.n_primal();
    let v = state[..n].to_vec();
    let duals = ds.duals(state)?;
    let objective = problem.objective_value(&v)?;
    let kkt = kkt_residuals_with_tol(
        &problem,
        &gradients,
        &v,
        &duals.lambda,
        &duals.mu,
        opts.kkt_tol,
    )?;
    let oracle = opts.oracle_check.then(|| match oracle_solve(&problem) {
        Ok(o) => OracleOutcome::Solved(OracleComparison {
            rel_error_pct: rel_error_pct(objective, o.f_star),
            max_abs_x_error: v
                .iter()
                .zip(&o.x_star)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            f_star: o.f_star,
            x_star: o.x_star,
        }),
        Err(e) => OracleOutcome::Unavailable {
            unavailable: e.to_string(),
        },
    });
    let report = SolveReport {
        method: opts.method,
        gains: opts.gains,
        variables: v,
        lambda: duals.lambda,
        mu: duals.mu,
        objective,
        settling_time_s: settle.settling_time,
        settled: settle.settled,
        kkt,
        oracle,
        accepted_steps: tr.accepted_steps,
        rejected_steps: tr.rejected_steps,
        early_stop_at: tr.early_stop_at,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(SolveRun {
        report,
        system: ds,
        trajectory: tr,
    })
}
