//! Constrained optimization problems and their symbolic gradients.
//!
//! Problems have the form
//!
//! ```text
//! minimize f(x)  subject to  g_i(x) >= 0,  h_j(x) = 0
//! ```
//!
//! Parsers produce a [`RawProblem`] that may still carry variable bounds;
//! [`normalize`] turns the bounds into inequality rows and enforces the
//! degree limit on constraints.

use thiserror::Error;

use crate::expr::{EvalError, Expr};

/// Closed interval for one variable; infinite ends mean "no bound".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const FREE: Bounds = Bounds {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    pub const NONNEGATIVE: Bounds = Bounds {
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds::FREE
    }
}

/// Problem as read from a source file, before bounds are materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct RawProblem {
    pub var_names: Vec<String>,
    pub objective: Expr,
    pub inequalities: Vec<Expr>,
    pub ineq_names: Vec<String>,
    pub equalities: Vec<Expr>,
    pub eq_names: Vec<String>,
    pub bounds: Vec<Bounds>,
}

impl RawProblem {
    /// An unbounded problem with no constraints.
    pub fn new(var_names: Vec<String>, objective: Expr) -> RawProblem {
        let n = var_names.len();
        RawProblem {
            var_names,
            objective,
            inequalities: Vec::new(),
            ineq_names: Vec::new(),
            equalities: Vec::new(),
            eq_names: Vec::new(),
            bounds: vec![Bounds::FREE; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn add_inequality(&mut self, name: impl Into<String>, g: Expr) {
        self.ineq_names.push(name.into());
        self.inequalities.push(g);
    }

    pub fn add_equality(&mut self, name: impl Into<String>, h: Expr) {
        self.eq_names.push(name.into());
        self.equalities.push(h);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("variable `{name}` has lower bound {lower} above upper bound {upper}")]
    BoundsContradiction {
        name: String,
        lower: f64,
        upper: f64,
    },
    #[error("constraint `{name}` has degree {degree}; only linear and quadratic constraints are supported")]
    Degree { name: String, degree: String },
    #[error("malformed expression in {location}: {reason}")]
    Malformed { location: String, reason: String },
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Normalized problem: every constraint is an explicit row.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub var_names: Vec<String>,
    pub objective: Expr,
    pub inequalities: Vec<Expr>,
    pub ineq_names: Vec<String>,
    pub equalities: Vec<Expr>,
    pub eq_names: Vec<String>,
    /// Bounds of the source problem, kept for reporting. Their finite ends
    /// are already present as inequality rows.
    pub source_bounds: Option<Vec<Bounds>>,
}

impl Problem {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.inequalities.len()
    }

    pub fn n_eq(&self) -> usize {
        self.equalities.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.objective.eval(x)
    }

    pub fn ineq_values(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.inequalities.iter().map(|g| g.eval(x)).collect()
    }

    pub fn eq_values(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.equalities.iter().map(|h| h.eval(x)).collect()
    }

    /// Turns the normalized problem back into a raw one without bounds.
    pub fn to_raw(&self) -> RawProblem {
        RawProblem {
            var_names: self.var_names.clone(),
            objective: self.objective.clone(),
            inequalities: self.inequalities.clone(),
            ineq_names: self.ineq_names.clone(),
            equalities: self.equalities.clone(),
            eq_names: self.eq_names.clone(),
            bounds: vec![Bounds::FREE; self.n_vars()],
        }
    }
}

/// Materializes finite bounds as inequality rows (lower bounds in variable
/// order, then upper bounds), constant-folds every expression, and rejects
/// constraints of degree above two.
pub fn normalize(raw: RawProblem) -> Result<Problem, ProblemError> {
    let n = raw.n_vars();
    let check = |what: &'static str, got: usize, expected: usize| {
        if got == expected {
            Ok(())
        } else {
            Err(ProblemError::LengthMismatch {
                what,
                got,
                expected,
            })
        }
    };
    check("bounds", raw.bounds.len(), n)?;
    check(
        "inequality names",
        raw.ineq_names.len(),
        raw.inequalities.len(),
    )?;
    check("equality names", raw.eq_names.len(), raw.equalities.len())?;

    let malformed = |location: String, reason: String| ProblemError::Malformed { location, reason };
    raw.objective
        .validate(n)
        .map_err(|r| malformed("objective".into(), r))?;
    for (name, e) in raw
        .ineq_names
        .iter()
        .zip(&raw.inequalities)
        .chain(raw.eq_names.iter().zip(&raw.equalities))
    {
        e.validate(n)
            .map_err(|r| malformed(format!("constraint `{name}`"), r))?;
        match e.degree() {
            Some(d) if d <= 2 => {}
            // Structural degree can overstate (x^3 - x^3); trust the expansion.
            Some(d) => match crate::poly::Poly::from_expr(e) {
                Some(p) if p.degree() <= 2 => {}
                _ => {
                    return Err(ProblemError::Degree {
                        name: name.clone(),
                        degree: d.to_string(),
                    })
                }
            },
            None => {
                return Err(ProblemError::Degree {
                    name: name.clone(),
                    degree: "non-polynomial".into(),
                })
            }
        }
    }

    for (name, b) in raw.var_names.iter().zip(&raw.bounds) {
        if b.lower.is_nan() || b.upper.is_nan() || b.lower > b.upper {
            return Err(ProblemError::BoundsContradiction {
                name: name.clone(),
                lower: b.lower,
                upper: b.upper,
            });
        }
    }

    let RawProblem {
        var_names,
        objective,
        inequalities,
        ineq_names,
        equalities,
        eq_names,
        bounds,
    } = raw;
    // Consuming the source rows one at a time keeps peak memory near a
    // single copy of the problem.
    let mut inequalities: Vec<Expr> = inequalities.into_iter().map(|e| e.simplify()).collect();
    let mut ineq_names = ineq_names;
    for (k, b) in bounds.iter().enumerate() {
        if b.lower.is_finite() {
            inequalities.push((Expr::var(k) - Expr::constant(b.lower)).simplify());
            ineq_names.push(format!("{}_lo", var_names[k]));
        }
    }
    for (k, b) in bounds.iter().enumerate() {
        if b.upper.is_finite() {
            inequalities.push((Expr::constant(b.upper) - Expr::var(k)).simplify());
            ineq_names.push(format!("{}_up", var_names[k]));
        }
    }

    Ok(Problem {
        var_names,
        objective: objective.simplify(),
        inequalities,
        ineq_names,
        equalities: equalities.into_iter().map(|e| e.simplify()).collect(),
        eq_names,
        source_bounds: Some(bounds),
    })
}

/// One gradient row stored sparsely: `(variable, partial)` sorted by
/// variable. The indices are exactly the variables occurring in the source
/// expression.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, Expr)>,
}

impl SparseRow {
    pub fn sparsity(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|(k, _)| *k)
    }

    pub fn get(&self, k: usize) -> Option<&Expr> {
        self.entries
            .binary_search_by_key(&k, |(j, _)| *j)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Adds `scale * row(x)` into `out`.
    pub fn accumulate(&self, x: &[f64], scale: f64, out: &mut [f64]) -> Result<(), EvalError> {
        for (k, d) in &self.entries {
            out[*k] += scale * d.eval(x)?;
        }
        Ok(())
    }
}

/// Symbolic gradients of the objective and of every constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grad_f: Vec<Expr>,
    pub grad_g: Vec<SparseRow>,
    pub grad_h: Vec<SparseRow>,
}

impl GradientSet {
    /// Entry `(i, k)` of the inequality Jacobian, zero when structurally
    /// absent.
    pub fn ineq_entry(&self, i: usize, k: usize) -> Expr {
        self.grad_g[i].get(k).cloned().unwrap_or(Expr::Const(0.0))
    }

    pub fn eq_entry(&self, j: usize, k: usize) -> Expr {
        self.grad_h[j].get(k).cloned().unwrap_or(Expr::Const(0.0))
    }
}

/// Exact symbolic partials of objective and constraints.
pub fn differentiate(p: &Problem) -> GradientSet {
    let n = p.n_vars();
    let mut grad_f = vec![Expr::Const(0.0); n];
    for (k, d) in p.objective.gradient() {
        grad_f[k] = d;
    }
    let row = |e: &Expr| SparseRow {
        entries: e.gradient(),
    };
    GradientSet {
        grad_f,
        grad_g: p.inequalities.iter().map(row).collect(),
        grad_h: p.equalities.iter().map(row).collect(),
    }
}

/// `∇f(v) + Σ λ_i ∇g_i(v) + Σ μ_j ∇h_j(v)`. Rows whose multiplier is zero
/// are skipped, so the cost follows the structural nonzeros of the active
/// rows.
pub fn lagrangian_gradient(
    gs: &GradientSet,
    v: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::with_capacity(v.len());
    for d in &gs.grad_f {
        out.push(d.eval(v)?);
    }
    for (row, &l) in gs.grad_g.iter().zip(lambda) {
        if l != 0.0 {
            row.accumulate(v, l, &mut out)?;
        }
    }
    for (row, &m) in gs.grad_h.iter().zip(mu) {
        if m != 0.0 {
            row.accumulate(v, m, &mut out)?;
        }
    }
    Ok(out)
}
