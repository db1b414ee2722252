//! Polynomial expansion of expressions and quadratic-form extraction.

use std::collections::BTreeMap;

use crate::expr::Expr;

/// Sparse multivariate polynomial. Monomials are sorted variable-index lists
/// with multiplicity (`[0, 0, 3]` is `x0^2 * x3`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    pub terms: BTreeMap<Vec<usize>, f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Poly {
        let mut p = Poly::default();
        if c != 0.0 {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    /// Expands `e`. Returns `None` when a function node depends on a
    /// variable.
    pub fn from_expr(e: &Expr) -> Option<Poly> {
        match e {
            Expr::Const(c) => Some(Poly::constant(*c)),
            Expr::Var(k) => {
                let mut p = Poly::default();
                p.terms.insert(vec![*k], 1.0);
                Some(p)
            }
            Expr::Sum(items) => {
                let mut acc = Poly::default();
                for t in items {
                    acc.add_assign(&Poly::from_expr(t)?);
                }
                Some(acc)
            }
            Expr::Prod(items) => {
                let mut acc = Poly::constant(1.0);
                for t in items {
                    acc = acc.mul(&Poly::from_expr(t)?);
                }
                Some(acc)
            }
            Expr::Pow(b, n) => {
                let base = Poly::from_expr(b)?;
                let mut acc = Poly::constant(1.0);
                for _ in 0..*n {
                    acc = acc.mul(&base);
                }
                Some(acc)
            }
            Expr::Func(..) => match e.simplify() {
                Expr::Const(c) => Some(Poly::constant(c)),
                _ => None,
            },
        }
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    fn add_assign(&mut self, other: &Poly) {
        for (m, c) in &other.terms {
            let entry = self.terms.entry(m.clone()).or_insert(0.0);
            *entry += c;
            if *entry == 0.0 {
                self.terms.remove(m);
            }
        }
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = Vec::with_capacity(ma.len() + mb.len());
                m.extend_from_slice(ma);
                m.extend_from_slice(mb);
                m.sort_unstable();
                *out.terms.entry(m).or_insert(0.0) += ca * cb;
            }
        }
        out.terms.retain(|_, c| *c != 0.0);
        out
    }

    /// True when every coefficient agrees with `other` within `tol`
    /// (absolute, scaled by the coefficient magnitude).
    pub fn approx_eq(&self, other: &Poly, tol: f64) -> bool {
        let keys: std::collections::BTreeSet<&Vec<usize>> =
            self.terms.keys().chain(other.terms.keys()).collect();
        keys.into_iter().all(|m| {
            let a = self.terms.get(m).copied().unwrap_or(0.0);
            let b = other.terms.get(m).copied().unwrap_or(0.0);
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
        })
    }
}

/// `constant + Σ linear[k] x_k + Σ quad[(i, j)] x_i x_j` with `i <= j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadraticForm {
    pub constant: f64,
    pub linear: BTreeMap<usize, f64>,
    pub quad: BTreeMap<(usize, usize), f64>,
}

impl QuadraticForm {
    /// Extracts a quadratic form; `Err(degree)` when the expression is not a
    /// polynomial of degree at most two (`None` degree means non-polynomial).
    pub fn from_expr(e: &Expr) -> Result<QuadraticForm, Option<usize>> {
        let p = Poly::from_expr(e).ok_or(None)?;
        if p.degree() > 2 {
            return Err(Some(p.degree()));
        }
        let mut q = QuadraticForm::default();
        for (m, c) in p.terms {
            match m.as_slice() {
                [] => q.constant = c,
                [k] => {
                    q.linear.insert(*k, c);
                }
                [i, j] => {
                    q.quad.insert((*i, *j), c);
                }
                _ => unreachable!(),
            }
        }
        Ok(q)
    }

    pub fn is_linear(&self) -> bool {
        self.quad.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|(k, c)| c * x[*k]).sum();
        let quad: f64 = self.quad.iter().map(|((i, j), c)| c * x[*i] * x[*j]).sum();
        self.constant + lin + quad
    }

    /// Gradient as a dense vector of length `n`.
    pub fn gradient(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (k, c) in &self.linear {
            g[*k] += c;
        }
        for ((i, j), c) in &self.quad {
            g[*i] += c * x[*j];
            g[*j] += c * x[*i];
        }
        g
    }

    /// Symmetric Hessian entries `(i, j, value)` for all `i, j` (both
    /// triangles).
    pub fn hessian_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.quad.len());
        for ((i, j), c) in &self.quad {
            if i == j {
                out.push((*i, *i, 2.0 * c));
            } else {
                out.push((*i, *j, *c));
                out.push((*j, *i, *c));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Func;

    #[test]
    fn expands_square_of_sum() {
        let e = Expr::pow(Expr::var(0) - Expr::constant(2.0), 2);
        let p = Poly::from_expr(&e).unwrap();
        assert_eq!(p.terms.get(&vec![0, 0]), Some(&1.0));
        assert_eq!(p.terms.get(&vec![0]), Some(&-4.0));
        assert_eq!(p.terms.get(&vec![]), Some(&4.0));
    }

    #[test]
    fn function_of_variable_is_not_polynomial() {
        assert!(Poly::from_expr(&Expr::func(Func::Exp, Expr::var(0))).is_none());
        let c = Poly::from_expr(&Expr::func(Func::Exp, Expr::constant(0.0))).unwrap();
        assert_eq!(c, Poly::constant(1.0));
    }

    #[test]
    fn quadratic_form_rejects_cubic() {
        let e = Expr::pow(Expr::var(0), 3);
        assert_eq!(QuadraticForm::from_expr(&e), Err(Some(3)));
    }

    #[test]
    fn quadratic_form_gradient() {
        let e = Expr::Sum(vec![
            Expr::scaled(4.0, Expr::pow(Expr::var(0), 2)),
            Expr::Prod(vec![Expr::constant(2.0), Expr::var(0), Expr::var(1)]),
            Expr::scaled(1.5, Expr::var(0)),
            Expr::constant(4.0),
        ]);
        let q = QuadraticForm::from_expr(&e).unwrap();
        let g = q.gradient(&[1.0, 2.0], 2);
        assert_eq!(g, vec![8.0 + 4.0 + 1.5, 2.0]);
        assert_eq!(q.eval(&[1.0, 2.0]), 4.0 + 4.0 + 1.5 + 4.0);
    }
}
