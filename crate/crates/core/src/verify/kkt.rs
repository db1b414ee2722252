//! First-order optimality residuals.

use serde::{Deserialize, Serialize};

use crate::expr::EvalError;
use crate::problem::{lagrangian_gradient, GradientSet, Problem};

pub const DEFAULT_KKT_TOL: f64 = 1e-6;

/// Infinity-norm residuals of the KKT conditions for
/// `L = f + λᵀg + μᵀh` with `g >= 0`, `h = 0`, `λ <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_ineq: f64,
    pub primal_eq: f64,
    pub dual_feas: f64,
    pub comp_slack: f64,
    pub tol: f64,
    pub pass: bool,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals()
            .into_iter()
            .map(|(_, v)| v)
            .fold(0.0, f64::max)
    }

    pub fn residuals(&self) -> [(&'static str, f64); 5] {
        [
            ("stationarity", self.stationarity),
            ("primal_ineq", self.primal_ineq),
            ("primal_eq", self.primal_eq),
            ("dual_feas", self.dual_feas),
            ("comp_slack", self.comp_slack),
        ]
    }

    /// Names of the residuals above tolerance.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn failing(&self) -> Vec<&'static str> {
        self.residuals()
            .into_iter()
            // NaN residuals count as failing.
            .filter(|(_, v)| !(*v <= self.tol))
            .map(|(n, _)| n)
            .collect()
    }
}

pub fn kkt_residuals(
    p: &Problem,
    gs: &GradientSet,
    v: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Result<KktReport, EvalError> {
    kkt_residuals_with_tol(p, gs, v, lambda, mu, DEFAULT_KKT_TOL)
}

pub fn kkt_residuals_with_tol(
    p: &Problem,
    gs: &GradientSet,
    v: &[f64],
    lambda: &[f64],
    mu: &[f64],
    tol: f64,
) -> Result<KktReport, EvalError> {
    let grad = lagrangian_gradient(gs, v, lambda, mu)?;
    let g = p.ineq_values(v)?;
    let h = p.eq_values(v)?;
    let inf = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, |m: f64, x| m.max(x));
    let stationarity = inf(&mut grad.iter().map(|x| x.abs()));
    let primal_ineq = inf(&mut g.iter().map(|x| -x));
    let primal_eq = inf(&mut h.iter().map(|x| x.abs()));
    let dual_feas = inf(&mut lambda.iter().copied());
    let comp_slack = inf(&mut lambda.iter().zip(&g).map(|(l, gi)| (l * gi).abs()));
    let mut r = KktReport {
        stationarity,
        primal_ineq,
        primal_eq,
        dual_feas,
        comp_slack,
        tol,
        pass: false,
    };
    r.pass = r.failing().is_empty();
    Ok(r)
}
