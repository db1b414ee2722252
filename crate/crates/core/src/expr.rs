//! Symbolic expression trees over optimization variables.
//!
//! Expressions are built from constants, variables, n-ary sums and products,
//! integer powers and a small whitelist of unary functions. Everything the
//! netlist backend can express as a behavioral source is representable here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Whitelisted unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
}

impl Func {
    pub const ALL: [Func; 4] = [Func::Sin, Func::Cos, Func::Exp, Func::Log];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("log of non-positive value {0}")]
    Domain(f64),
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
}

/// Expression tree. Variable indices refer to the owning problem's variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Sum(Vec<Expr>),
    Prod(Vec<Expr>),
    /// Integer power with exponent >= 2.
    Pow(Box<Expr>, u32),
    Func(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(k: usize) -> Expr {
        Expr::Var(k)
    }

    pub fn sum(items: Vec<Expr>) -> Expr {
        match items.len() {
            0 => Expr::Const(0.0),
            1 => items.into_iter().next().unwrap(),
            _ => Expr::Sum(items),
        }
    }

    pub fn prod(items: Vec<Expr>) -> Expr {
        match items.len() {
            0 => Expr::Const(1.0),
            1 => items.into_iter().next().unwrap(),
            _ => Expr::Prod(items),
        }
    }

    /// `base^exp`; exponents 0 and 1 collapse to `1` and `base`.
    pub fn pow(base: Expr, exp: u32) -> Expr {
        match exp {
            0 => Expr::Const(1.0),
            1 => base,
            n => Expr::Pow(Box::new(base), n),
        }
    }

    pub fn func(f: Func, arg: Expr) -> Expr {
        Expr::Func(f, Box::new(arg))
    }

    /// `c * e`.
    pub fn scaled(c: f64, e: Expr) -> Expr {
        Expr::Prod(vec![Expr::Const(c), e])
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Checks the structural invariants: indices below `n_vars`, non-empty
    /// sums and products, powers of at least two.
    pub fn validate(&self, n_vars: usize) -> Result<(), String> {
        match self {
            Expr::Const(_) => Ok(()),
            Expr::Var(k) if *k < n_vars => Ok(()),
            Expr::Var(k) => Err(format!("variable index {k} out of range (N = {n_vars})")),
            Expr::Sum(items) | Expr::Prod(items) => {
                if items.is_empty() {
                    return Err("empty sum or product".into());
                }
                items.iter().try_for_each(|e| e.validate(n_vars))
            }
            Expr::Pow(b, n) => {
                if *n < 2 {
                    return Err(format!("power exponent {n} below 2"));
                }
                b.validate(n_vars)
            }
            Expr::Func(_, a) => a.validate(n_vars),
        }
    }

    /// Sorted set of variable indices that occur in the expression.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(k) => {
                out.insert(*k);
            }
            Expr::Sum(items) | Expr::Prod(items) => items.iter().for_each(|e| e.collect_vars(out)),
            Expr::Pow(b, _) => b.collect_vars(out),
            Expr::Func(_, a) => a.collect_vars(out),
        }
    }

    /// Copy with every `Var(k)` replaced by `Var(f(k))`.
    pub fn map_vars(&self, f: &dyn Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(k) => Expr::Var(f(*k)),
            Expr::Sum(items) => Expr::Sum(items.iter().map(|e| e.map_vars(f)).collect()),
            Expr::Prod(items) => Expr::Prod(items.iter().map(|e| e.map_vars(f)).collect()),
            Expr::Pow(b, n) => Expr::Pow(Box::new(b.map_vars(f)), *n),
            Expr::Func(g, a) => Expr::Func(*g, Box::new(a.map_vars(f))),
        }
    }

    pub fn depends_on(&self, k: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(j) => *j == k,
            Expr::Sum(items) | Expr::Prod(items) => items.iter().any(|e| e.depends_on(k)),
            Expr::Pow(b, _) => b.depends_on(k),
            Expr::Func(_, a) => a.depends_on(k),
        }
    }

    /// Structural polynomial degree, or `None` when a function node depends on
    /// a variable.
    pub fn degree(&self) -> Option<u32> {
        match self {
            Expr::Const(_) => Some(0),
            Expr::Var(_) => Some(1),
            Expr::Sum(items) => items.iter().try_fold(0, |d, e| Some(d.max(e.degree()?))),
            Expr::Prod(items) => items.iter().try_fold(0, |d, e| Some(d + e.degree()?)),
            Expr::Pow(b, n) => Some(b.degree()? * n),
            Expr::Func(_, a) => match a.degree()? {
                0 => Some(0),
                _ => None,
            },
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_inner(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_inner(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(k) => x[*k],
            Expr::Sum(items) => {
                let mut acc = 0.0;
                for e in items {
                    acc += e.eval_inner(x)?;
                }
                acc
            }
            Expr::Prod(items) => {
                let mut acc = 1.0;
                for e in items {
                    acc *= e.eval_inner(x)?;
                }
                acc
            }
            Expr::Pow(b, n) => b.eval_inner(x)?.powi(*n as i32),
            Expr::Func(f, a) => {
                let v = a.eval_inner(x)?;
                if *f == Func::Log && v <= 0.0 {
                    return Err(EvalError::Domain(v));
                }
                f.apply(v)
            }
        })
    }

    /// Constant folding: collapses constant-only subtrees, flattens nested
    /// sums and products, and removes additive zeros and multiplicative ones.
    /// Sums keep their constant last, products keep it first.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Sum(items) => {
                let mut c = 0.0;
                let mut rest = Vec::with_capacity(items.len());
                for e in items {
                    match e.simplify() {
                        Expr::Const(v) => c += v,
                        Expr::Sum(inner) => {
                            for t in inner {
                                match t {
                                    Expr::Const(v) => c += v,
                                    t => rest.push(t),
                                }
                            }
                        }
                        t => rest.push(t),
                    }
                }
                if c != 0.0 || rest.is_empty() {
                    rest.push(Expr::Const(c));
                }
                Expr::sum(rest)
            }
            Expr::Prod(items) => {
                let mut c = 1.0;
                let mut rest = Vec::with_capacity(items.len());
                for e in items {
                    match e.simplify() {
                        Expr::Const(v) => c *= v,
                        Expr::Prod(inner) => {
                            for t in inner {
                                match t {
                                    Expr::Const(v) => c *= v,
                                    t => rest.push(t),
                                }
                            }
                        }
                        t => rest.push(t),
                    }
                }
                if c == 0.0 {
                    return Expr::Const(0.0);
                }
                if c != 1.0 || rest.is_empty() {
                    rest.insert(0, Expr::Const(c));
                }
                Expr::prod(rest)
            }
            Expr::Pow(b, n) => match b.simplify() {
                Expr::Const(v) => Expr::Const(v.powi(*n as i32)),
                b => Expr::pow(b, *n),
            },
            Expr::Func(f, a) => match a.simplify() {
                Expr::Const(v) if !(*f == Func::Log && v <= 0.0) => Expr::Const(f.apply(v)),
                a => Expr::func(*f, a),
            },
        }
    }

    /// Symbolic partial derivative with respect to variable `k`, constant
    /// folded.
    pub fn derivative(&self, k: usize) -> Expr {
        self.derivative_raw(k).simplify()
    }

    fn derivative_raw(&self, k: usize) -> Expr {
        if !self.depends_on(k) {
            return Expr::Const(0.0);
        }
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(_) => Expr::Const(1.0),
            Expr::Sum(items) => Expr::sum(
                items
                    .iter()
                    .filter(|e| e.depends_on(k))
                    .map(|e| e.derivative_raw(k))
                    .collect(),
            ),
            Expr::Prod(items) => {
                let mut terms = Vec::new();
                for (i, e) in items.iter().enumerate() {
                    if !e.depends_on(k) {
                        continue;
                    }
                    let mut factors = items.clone();
                    factors[i] = e.derivative_raw(k);
                    terms.push(Expr::Prod(factors));
                }
                Expr::sum(terms)
            }
            Expr::Pow(b, n) => Expr::Prod(vec![power_rule_outer(b, *n), b.derivative_raw(k)]),
            Expr::Func(f, a) => Expr::Prod(vec![chain_rule_outer(*f, a), a.derivative_raw(k)]),
        }
    }

    /// Sparse gradient: one constant-folded partial per variable that occurs
    /// in the expression, sorted by variable index. Entries that fold to zero
    /// (e.g. from `x - x`) are kept so the sparsity pattern stays structural.
    pub fn gradient(&self) -> Vec<(usize, Expr)> {
        self.gradient_raw()
            .into_iter()
            .map(|(k, terms)| (k, Expr::sum(terms).simplify()))
            .collect()
    }

    // Map from variable to the list of summands of its partial derivative.
    fn gradient_raw(&self) -> BTreeMap<usize, Vec<Expr>> {
        let mut out: BTreeMap<usize, Vec<Expr>> = BTreeMap::new();
        match self {
            Expr::Const(_) => {}
            Expr::Var(k) => {
                out.insert(*k, vec![Expr::Const(1.0)]);
            }
            Expr::Sum(items) => {
                for e in items {
                    for (k, terms) in e.gradient_raw() {
                        out.entry(k).or_default().extend(terms);
                    }
                }
            }
            Expr::Prod(items) => {
                for (i, e) in items.iter().enumerate() {
                    for (k, terms) in e.gradient_raw() {
                        let mut factors = Vec::with_capacity(items.len());
                        factors.extend(items[..i].iter().cloned());
                        factors.push(Expr::sum(terms));
                        factors.extend(items[i + 1..].iter().cloned());
                        out.entry(k).or_default().push(Expr::Prod(factors));
                    }
                }
            }
            Expr::Pow(b, n) => {
                let outer = power_rule_outer(b, *n);
                for (k, terms) in b.gradient_raw() {
                    out.insert(k, vec![Expr::Prod(vec![outer.clone(), Expr::sum(terms)])]);
                }
            }
            Expr::Func(f, a) => {
                let outer = chain_rule_outer(*f, a);
                for (k, terms) in a.gradient_raw() {
                    out.insert(k, vec![Expr::Prod(vec![outer.clone(), Expr::sum(terms)])]);
                }
            }
        }
        out
    }

    /// Renders the expression with the given variable naming and style.
    pub fn render(&self, style: &RenderStyle<'_>) -> String {
        let mut s = String::new();
        render_into(self, style, Ctx::Top, &mut s);
        s
    }
}

// d/du u^n = n * u^(n-1)
fn power_rule_outer(b: &Expr, n: u32) -> Expr {
    Expr::Prod(vec![Expr::Const(n as f64), Expr::pow(b.clone(), n - 1)])
}

// f'(a) for the whitelisted functions. 1/a is written exp(-log(a)), which is
// exact wherever log(a) is defined.
fn chain_rule_outer(f: Func, a: &Expr) -> Expr {
    let a = a.clone();
    match f {
        Func::Sin => Expr::func(Func::Cos, a),
        Func::Cos => Expr::Prod(vec![Expr::Const(-1.0), Expr::func(Func::Sin, a)]),
        Func::Exp => Expr::func(Func::Exp, a),
        Func::Log => Expr::func(Func::Exp, Expr::scaled(-1.0, Expr::func(Func::Log, a))),
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Sum(vec![self, rhs])
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sum(vec![self, -rhs])
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Prod(vec![self, rhs])
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::scaled(-1.0, self)
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Expr {
        Expr::Const(c)
    }
}

/// How powers are written out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowStyle {
    /// `base^n`
    Caret,
    /// `base*base*...`, for targets without a safe integer power operator.
    Repeat,
}

pub struct RenderStyle<'a> {
    pub var: &'a dyn Fn(usize) -> String,
    pub pow: PowStyle,
    /// Omit spaces around `+` and `-`.
    pub compact: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Ctx {
    Top,
    Factor,
}

/// Shortest round-trip representation of a finite constant.
pub fn format_const(c: f64) -> String {
    let a = c.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{c:e}")
    } else {
        format!("{c}")
    }
}

fn render_into(e: &Expr, st: &RenderStyle<'_>, ctx: Ctx, out: &mut String) {
    match e {
        Expr::Const(c) => {
            if *c < 0.0 && ctx == Ctx::Factor {
                let _ = write!(out, "({})", format_const(*c));
            } else {
                out.push_str(&format_const(*c));
            }
        }
        Expr::Var(k) => out.push_str(&(st.var)(*k)),
        Expr::Sum(items) => {
            if ctx == Ctx::Factor {
                out.push('(');
            }
            let (plus, minus) = if st.compact {
                ("+", "-")
            } else {
                (" + ", " - ")
            };
            for (i, t) in items.iter().enumerate() {
                let (negative, body) = split_sign(t);
                match (i, negative) {
                    (0, false) => {}
                    (0, true) => out.push('-'),
                    (_, false) => out.push_str(plus),
                    (_, true) => out.push_str(minus),
                }
                match body {
                    Some(b) => render_into(&b, st, Ctx::Factor, out),
                    None => render_into(t, st, Ctx::Factor, out),
                }
            }
            if ctx == Ctx::Factor {
                out.push(')');
            }
        }
        Expr::Prod(items)
            if ctx == Ctx::Top && items.len() >= 2 && items[0] == Expr::Const(-1.0) =>
        {
            out.push('-');
            render_into(&Expr::prod(items[1..].to_vec()), st, Ctx::Factor, out);
        }
        Expr::Prod(items) => {
            for (i, t) in items.iter().enumerate() {
                if i > 0 {
                    out.push('*');
                }
                render_into(t, st, Ctx::Factor, out);
            }
        }
        Expr::Pow(b, n) => match st.pow {
            PowStyle::Caret => {
                render_pow_base(b, st, out);
                let _ = write!(out, "^{n}");
            }
            PowStyle::Repeat => {
                for i in 0..*n {
                    if i > 0 {
                        out.push('*');
                    }
                    render_pow_base(b, st, out);
                }
            }
        },
        Expr::Func(f, a) => {
            out.push_str(f.name());
            out.push('(');
            render_into(a, st, Ctx::Top, out);
            out.push(')');
        }
    }
}

fn render_pow_base(b: &Expr, st: &RenderStyle<'_>, out: &mut String) {
    match b {
        Expr::Var(_) | Expr::Func(..) => render_into(b, st, Ctx::Factor, out),
        Expr::Const(c) if *c >= 0.0 => render_into(b, st, Ctx::Factor, out),
        _ => {
            out.push('(');
            render_into(b, st, Ctx::Top, out);
            out.push(')');
        }
    }
}

// A sum term with a negative leading constant is printed as a subtraction.
// Returns the magnitude form of the term when that applies.
fn split_sign(t: &Expr) -> (bool, Option<Expr>) {
    match t {
        Expr::Const(c) if *c < 0.0 => (true, Some(Expr::Const(-c))),
        Expr::Prod(items) => match items.first() {
            Some(Expr::Const(c)) if *c < 0.0 => {
                let mut rest: Vec<Expr> = items[1..].to_vec();
                if *c != -1.0 {
                    rest.insert(0, Expr::Const(-c));
                }
                (true, Some(Expr::prod(rest)))
            }
            _ => (false, None),
        },
        _ => (false, None),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |k: usize| format!("x{}", k + 1);
        let st = RenderStyle {
            var: &name,
            pow: PowStyle::Caret,
            compact: false,
        };
        f.write_str(&self.render(&st))
    }
}
