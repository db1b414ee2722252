//! A small AMPL subset: scalar variable declarations, one objective and
//! algebraic constraints.
//!
//! ```text
//! var x1 >= 0;
//! minimize cost: 4*x1^2 - x1;
//! subject to c1: x1 <= 3;
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use super::{ParseError, Parsed};
use crate::expr::{format_const, Expr, Func, PowStyle, RenderStyle};
use crate::problem::{Bounds, RawProblem};

const KEYWORDS: [&str; 5] = ["var", "minimize", "maximize", "subject", "to"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Tok::Num(v),
                _ => return Err(ParseError::at(l0, c0, format!("malformed number `{s}`"))),
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = match two.as_str() {
                ">=" => Some(">="),
                "<=" => Some("<="),
                "==" => Some("="),
                _ => None,
            };
            if let Some(s) = sym {
                i += 2;
                Tok::Sym(s)
            } else {
                i += 1;
                match c {
                    '+' => Tok::Sym("+"),
                    '-' => Tok::Sym("-"),
                    '*' => Tok::Sym("*"),
                    '/' => Tok::Sym("/"),
                    '^' => Tok::Sym("^"),
                    '(' => Tok::Sym("("),
                    ')' => Tok::Sym(")"),
                    ';' => Tok::Sym(";"),
                    ':' => Tok::Sym(":"),
                    '=' => Tok::Sym("="),
                    '<' | '>' => {
                        return Err(ParseError::at(
                            l0,
                            c0,
                            "strict inequalities are not supported; use <= or >=",
                        ))
                    }
                    other => {
                        return Err(ParseError::at(
                            l0,
                            c0,
                            format!("unexpected character `{other}`"),
                        ))
                    }
                }
            }
        };
        col += i - start;
        out.push(Spanned {
            tok,
            line: l0,
            col: c0,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    vars: HashMap<String, usize>,
    names: HashSet<String>,
    problem: RawProblem,
    has_objective: bool,
}

type Res<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at<T>(t: &Spanned, msg: impl Into<String>) -> Res<T> {
        Err(ParseError::at(t.line, t.col, msg))
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn expect_sym(&mut self, s: &'static str) -> Res<()> {
        let t = self.next();
        if t.tok == Tok::Sym(s) {
            Ok(())
        } else {
            Self::err_at(
                &t,
                format!("expected `{s}`, found {}", Self::describe(&t.tok)),
            )
        }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn new_name(&mut self) -> Res<String> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if KEYWORDS.contains(&s.as_str()) || Func::from_name(s).is_some() => {
                Self::err_at(&t, format!("reserved word `{s}` cannot be used as a name"))
            }
            Tok::Ident(s) if self.names.contains(s) => {
                Self::err_at(&t, format!("duplicate name `{s}`"))
            }
            Tok::Ident(s) => {
                self.names.insert(s.clone());
                Ok(s.clone())
            }
            other => Self::err_at(
                &t,
                format!("expected a name, found {}", Self::describe(other)),
            ),
        }
    }

    fn statement(&mut self) -> Res<()> {
        let t = self.next();
        let Tok::Ident(kw) = &t.tok else {
            return Self::err_at(
                &t,
                format!("expected a statement, found {}", Self::describe(&t.tok)),
            );
        };
        match kw.as_str() {
            "var" => self.var_decl(),
            "minimize" => {
                if self.has_objective {
                    return Self::err_at(&t, "multiple objectives");
                }
                self.has_objective = true;
                self.new_name()?;
                self.expect_sym(":")?;
                self.problem.objective = self.expr()?;
                self.expect_sym(";")
            }
            "maximize" => Self::err_at(
                &t,
                "maximize is not supported; minimize the negated objective",
            ),
            "subject" => {
                let to = self.next();
                if to.tok != Tok::Ident("to".into()) {
                    return Self::err_at(&to, "expected `to` after `subject`");
                }
                let name = self.new_name()?;
                self.expect_sym(":")?;
                let lhs = self.expr()?;
                let rel = self.next();
                let rhs = self.expr()?;
                match rel.tok {
                    Tok::Sym(">=") => self.problem.add_inequality(name, lhs - rhs),
                    Tok::Sym("<=") => self.problem.add_inequality(name, rhs - lhs),
                    Tok::Sym("=") => self.problem.add_equality(name, lhs - rhs),
                    ref other => {
                        return Self::err_at(
                            &rel,
                            format!(
                                "expected `>=`, `<=` or `=`, found {}",
                                Self::describe(other)
                            ),
                        )
                    }
                }
                self.expect_sym(";")
            }
            other => Self::err_at(&t, format!("unknown statement `{other}`")),
        }
    }

    fn var_decl(&mut self) -> Res<()> {
        let name = self.new_name()?;
        let mut b = Bounds::FREE;
        let (mut seen_lo, mut seen_up) = (false, false);
        loop {
            let t = self.peek().clone();
            match t.tok {
                Tok::Sym(">=") if !seen_lo => {
                    self.next();
                    b.lower = self.constant_expr()?;
                    seen_lo = true;
                }
                Tok::Sym("<=") if !seen_up => {
                    self.next();
                    b.upper = self.constant_expr()?;
                    seen_up = true;
                }
                Tok::Sym(";") => break,
                ref other => {
                    return Self::err_at(
                        &t,
                        format!("expected a bound or `;`, found {}", Self::describe(other)),
                    )
                }
            }
        }
        self.next();
        self.vars.insert(name.clone(), self.problem.var_names.len());
        self.problem.var_names.push(name);
        self.problem.bounds.push(b);
        Ok(())
    }

    fn constant_expr(&mut self) -> Res<f64> {
        let t = self.peek().clone();
        let e = self.expr()?;
        match e.simplify().as_const() {
            Some(v) if v.is_finite() => Ok(v),
            _ => Self::err_at(&t, "bound must be a constant expression"),
        }
    }

    fn expr(&mut self) -> Res<Expr> {
        let mut terms = vec![self.term()?];
        loop {
            if self.at_sym("+") {
                self.next();
                terms.push(self.term()?);
            } else if self.at_sym("-") {
                self.next();
                terms.push(negate(self.term()?));
            } else {
                return Ok(Expr::sum(terms));
            }
        }
    }

    fn term(&mut self) -> Res<Expr> {
        let mut factors = vec![self.unary()?];
        loop {
            if self.at_sym("*") {
                self.next();
                factors.push(self.unary()?);
            } else if self.at_sym("/") {
                let t = self.next();
                let d = self.unary()?;
                match d.simplify().as_const() {
                    Some(c) if c != 0.0 => factors.push(Expr::Const(1.0 / c)),
                    Some(_) => return Self::err_at(&t, "division by zero"),
                    None => return Self::err_at(&t, "division by a non-constant expression"),
                }
            } else {
                return Ok(Expr::prod(factors));
            }
        }
    }

    fn unary(&mut self) -> Res<Expr> {
        if self.at_sym("-") {
            self.next();
            Ok(negate(self.unary()?))
        } else if self.at_sym("+") {
            self.next();
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Res<Expr> {
        let base = self.primary()?;
        if !self.at_sym("^") {
            return Ok(base);
        }
        let t = self.next();
        // Right associative, and the exponent may carry its own sign.
        let exp = self.unary()?;
        let Some(n) = exp.simplify().as_const() else {
            return Self::err_at(&t, "exponent must be a constant");
        };
        if let Some(b) = base.simplify().as_const() {
            return Ok(Expr::Const(b.powf(n)));
        }
        if n.fract() != 0.0 {
            return Self::err_at(&t, format!("non-integer exponent {}", format_const(n)));
        }
        if n < 0.0 {
            return Self::err_at(
                &t,
                "negative exponents of variable expressions are not supported",
            );
        }
        if n > u32::MAX as f64 {
            return Self::err_at(&t, "exponent too large");
        }
        Ok(Expr::pow(base, n as u32))
    }

    fn primary(&mut self) -> Res<Expr> {
        let t = self.next();
        match &t.tok {
            Tok::Num(v) => Ok(Expr::Const(*v)),
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.at_sym("(") {
                    let Some(f) = Func::from_name(name) else {
                        return Self::err_at(
                            &t,
                            format!("unsupported function `{name}` (allowed: sin, cos, exp, log)"),
                        );
                    };
                    self.next();
                    let arg = self.expr()?;
                    self.expect_sym(")")?;
                    return Ok(Expr::func(f, arg));
                }
                match self.vars.get(name) {
                    Some(&k) => Ok(Expr::Var(k)),
                    None => Self::err_at(&t, format!("undeclared identifier `{name}`")),
                }
            }
            other => Self::err_at(
                &t,
                format!("expected an expression, found {}", Self::describe(other)),
            ),
        }
    }
}

fn negate(e: Expr) -> Expr {
    match e {
        Expr::Const(c) => Expr::Const(-c),
        other => Expr::scaled(-1.0, other),
    }
}

/// Parses AMPL-subset text into a problem with bounds. Undeclared variables
/// are unbounded.
pub fn parse_ampl_subset(text: &str) -> Result<Parsed, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        vars: HashMap::new(),
        names: HashSet::new(),
        problem: RawProblem::new(Vec::new(), Expr::Const(0.0)),
        has_objective: false,
    };
    while p.peek().tok != Tok::Eof {
        p.statement()?;
    }
    if !p.has_objective {
        let t = p.peek().clone();
        return Parser::err_at(&t, "missing `minimize` objective");
    }
    Ok(Parsed {
        problem: p.problem,
        warnings: Vec::new(),
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&s)
        && Func::from_name(s).is_none()
}

// Maps arbitrary names onto unique identifiers of the subset grammar.
fn sanitize_names<'a>(
    names: impl Iterator<Item = &'a String>,
    used: &mut HashSet<String>,
) -> Vec<String> {
    names
        .map(|n| {
            let mut base = if is_identifier(n) {
                n.clone()
            } else {
                let mut s: String = n
                    .chars()
                    .map(|c| {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            c
                        } else {
                            '_'
                        }
                    })
                    .collect();
                if !s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_')
                    || !is_identifier(&s)
                {
                    s.insert(0, '_');
                }
                s
            };
            if used.contains(&base) {
                let mut k = 2;
                while used.contains(&format!("{base}_{k}")) {
                    k += 1;
                }
                base = format!("{base}_{k}");
            }
            used.insert(base.clone());
            base
        })
        .collect()
}

/// Writes a problem in the subset grammar. Names that are not valid
/// identifiers are rewritten.
pub fn emit_ampl(p: &RawProblem) -> String {
    let mut used = HashSet::new();
    let vars = sanitize_names(p.var_names.iter(), &mut used);
    let obj_name = sanitize_names(std::iter::once(&"obj".to_string()), &mut used).remove(0);
    let ineqs = sanitize_names(p.ineq_names.iter(), &mut used);
    let eqs = sanitize_names(p.eq_names.iter(), &mut used);

    let name = |k: usize| vars[k].clone();
    let st = RenderStyle {
        var: &name,
        pow: PowStyle::Caret,
        compact: false,
    };
    let mut out = String::new();
    for (k, v) in vars.iter().enumerate() {
        let b = p.bounds.get(k).copied().unwrap_or_default();
        let _ = write!(out, "var {v}");
        if b.lower.is_finite() {
            let _ = write!(out, " >= {}", format_const(b.lower));
        }
        if b.upper.is_finite() {
            let _ = write!(out, " <= {}", format_const(b.upper));
        }
        out.push_str(";\n");
    }
    let _ = writeln!(out, "minimize {obj_name}: {};", p.objective.render(&st));
    for (n, g) in ineqs.iter().zip(&p.inequalities) {
        let _ = writeln!(out, "subject to {n}: {} >= 0;", g.render(&st));
    }
    for (n, h) in eqs.iter().zip(&p.equalities) {
        let _ = writeln!(out, "subject to {n}: {} = 0;", h.render(&st));
    }
    out
}
