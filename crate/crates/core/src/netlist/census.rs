use serde::Serialize;

use super::{Element, Netlist, SynthError, MIN_LINEAR_COEFF};
use crate::expr::Expr;
use crate::method::SolverMethod;
use crate::poly::QuadraticForm;
use crate::problem::{GradientSet, Problem, SparseRow};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub opamps: usize,
    pub resistors: usize,
    pub capacitors: usize,
    pub diodes: usize,
    pub behavioral: usize,
    /// Distinct nodes, ground included.
    pub nodes: usize,
}

impl Census {
    pub fn components(&self) -> usize {
        self.opamps + self.resistors + self.capacitors + self.diodes + self.behavioral
    }
}

/// Counts by walking the component list.
pub fn component_census(nl: &Netlist) -> Census {
    let mut c = Census::default();
    let mut seen = vec![false; nl.node_count()];
    for comp in &nl.components {
        match comp.element {
            Element::Resistor { .. } => c.resistors += 1,
            Element::Capacitor { .. } => c.capacitors += 1,
            Element::Diode { .. } => c.diodes += 1,
            Element::OpAmp { .. } => c.opamps += 1,
            Element::Behavioral { .. } => c.behavioral += 1,
        }
        for t in comp.element.terminals() {
            seen[t as usize] = true;
        }
    }
    c.nodes = seen.iter().filter(|s| **s).count();
    c
}

struct RowCounts {
    linear: usize,
    monomials: usize,
    constant_pos: bool,
    constant_neg: bool,
}

fn row_counts(e: &Expr, name: &str) -> Result<RowCounts, SynthError> {
    let q = QuadraticForm::from_expr(e).map_err(|d| SynthError::Degree {
        name: name.to_string(),
        degree: d.map_or_else(|| "non-polynomial".into(), |d| d.to_string()),
    })?;
    Ok(RowCounts {
        linear: q
            .linear
            .values()
            .filter(|c| c.abs() >= MIN_LINEAR_COEFF)
            .count(),
        monomials: q.quad.len(),
        constant_pos: q.constant >= MIN_LINEAR_COEFF,
        constant_neg: q.constant <= -MIN_LINEAR_COEFF,
    })
}

struct GradCounts {
    constant: usize,
    variable: usize,
    has_pos: bool,
    has_neg: bool,
}

fn grad_counts(row: &SparseRow) -> GradCounts {
    let mut g = GradCounts {
        constant: 0,
        variable: 0,
        has_pos: false,
        has_neg: false,
    };
    for (_, e) in &row.entries {
        match e.as_const() {
            Some(a) if a.abs() < MIN_LINEAR_COEFF => {}
            Some(a) => {
                g.constant += 1;
                g.has_pos |= a > 0.0;
                g.has_neg |= a < 0.0;
            }
            None => g.variable += 1,
        }
    }
    g
}

/// Closed-form counts from the problem alone.
///
/// With `N` variables, `M` inequalities, `P` equalities and `G` multiplier
/// inverters (one per inequality with a positive constant partial, one per
/// equality with a negative constant partial):
///
/// * op-amps `= 2N + (M + P) + M + G`
/// * diodes `= M`
/// * capacitors `= N + (M + P)`, or `N` for the penalty method
/// * resistors `= 3N + 2M + 2G + Σ(linear terms + monomials + constant)
///   + Σ(gradient entries) + (M + P unless primal-dual)`
/// * behavioral sources `= N + Σ monomials + Σ variable partials + refs`
///
/// Node count: ground, five per variable, per stage junction and output
/// (plus the R-C midpoint for the augmented Lagrangian), per inequality the
/// clipper junction and `lam`, two per inverter, one per monomial, one per
/// variable partial, and one per reference used.
pub fn expected_census(
    p: &Problem,
    gs: &GradientSet,
    method: SolverMethod,
) -> Result<Census, SynthError> {
    let (n, m, pe) = (p.n_vars(), p.n_ineq(), p.n_eq());
    let mut c = Census::default();
    let mut gain_stages = 0;
    let mut terms = 0;
    let mut monomials = 0;
    let mut variable_partials = 0;
    let mut constant_partials = 0;
    let (mut vref, mut vrefn) = (false, false);
    let rows = p
        .inequalities
        .iter()
        .zip(&p.ineq_names)
        .zip(&gs.grad_g)
        .map(|(r, g)| (r, true, g))
        .chain(
            p.equalities
                .iter()
                .zip(&p.eq_names)
                .zip(&gs.grad_h)
                .map(|(r, g)| (r, false, g)),
        );
    for ((e, name), is_ineq, grad) in rows {
        let r = row_counts(e, name)?;
        terms += r.linear + r.monomials + usize::from(r.constant_pos || r.constant_neg);
        monomials += r.monomials;
        vref |= r.constant_pos;
        vrefn |= r.constant_neg;
        let g = grad_counts(grad);
        constant_partials += g.constant;
        variable_partials += g.variable;
        if (is_ineq && g.has_pos) || (!is_ineq && g.has_neg) {
            gain_stages += 1;
        }
    }
    let refs = usize::from(vref) + usize::from(vrefn);
    let stages = m + pe;
    c.opamps = 2 * n + stages + m + gain_stages;
    c.diodes = m;
    let dual_caps = if method == SolverMethod::Penalty {
        0
    } else {
        stages
    };
    c.capacitors = n + dual_caps;
    let feedback_r = if method == SolverMethod::PrimalDual {
        0
    } else {
        stages
    };
    c.resistors = 3 * n
        + 2 * m
        + 2 * gain_stages
        + terms
        + constant_partials
        + variable_partials
        + feedback_r;
    c.behavioral = n + monomials + variable_partials + refs;
    let midpoints = if method == SolverMethod::AugmentedLagrangian {
        stages
    } else {
        0
    };
    c.nodes = 1
        + 5 * n
        + 2 * stages
        + midpoints
        + 2 * m
        + 2 * gain_stages
        + monomials
        + variable_partials
        + refs;
    Ok(c)
}
