//! Exact reference solutions for small quadratic programs by active-set
//! enumeration.
//!
//! Every subset of the inequality rows is tried as an equality set (the
//! equality rows are always active). Each subset yields a linear KKT system
//! (or, with quadratic constraints, a nonlinear one solved by Newton's
//! method). Candidates that are primal feasible with correctly signed
//! multipliers are kept and the one with least objective wins.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::EvalError;
use crate::poly::QuadraticForm;
use crate::problem::Problem;

/// Bound on `M + P` for enumeration.
pub const MAX_ENUM_ROWS: usize = 20;
/// Tighter bound when some constraint is quadratic.
pub const MAX_QUAD_ROWS: usize = 15;

const FEAS_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub f_star: f64,
    /// Active rows in the combined numbering: inequality `i` is `i`,
    /// equality `j` is `M + j`.
    pub active_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("not a quadratic program: {0}")]
    NotQp(String),
    #[error("{rows} constraint rows exceed the enumeration limit of {limit}")]
    TooLarge { rows: usize, limit: usize },
    #[error("no feasible KKT point found")]
    Infeasible,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

struct Row {
    a: DVector<f64>,
    b: f64,
    /// Symmetric Hessian of the row, if it is quadratic.
    hess: Option<DMatrix<f64>>,
}

impl Row {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let lin = self.a.dot(x) + self.b;
        match &self.hess {
            Some(h) => lin + 0.5 * x.dot(&(h * x)),
            None => lin,
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.hess {
            Some(h) => &self.a + h * x,
            None => self.a.clone(),
        }
    }
}

struct Qp {
    n: usize,
    m: usize,
    q: DMatrix<f64>,
    c: DVector<f64>,
    rows: Vec<Row>,
}

fn dense_hessian(qf: &QuadraticForm, n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n);
    for (i, j, v) in qf.hessian_entries() {
        h[(i, j)] += v;
    }
    h
}

fn extract(p: &Problem) -> Result<Qp, OracleError> {
    let n = p.n_vars();
    let f = QuadraticForm::from_expr(&p.objective).map_err(|d| match d {
        Some(deg) => OracleError::NotQp(format!("objective has degree {deg}")),
        None => OracleError::NotQp("objective uses transcendental functions".into()),
    })?;
    let mut c = DVector::zeros(n);
    for (&k, &v) in &f.linear {
        c[k] = v;
    }
    let mut rows = Vec::with_capacity(p.n_ineq() + p.n_eq());
    for e in p.inequalities.iter().chain(&p.equalities) {
        let qf = QuadraticForm::from_expr(e)
            .map_err(|_| OracleError::NotQp("constraint of degree above two".into()))?;
        let mut a = DVector::zeros(n);
        for (&k, &v) in &qf.linear {
            a[k] = v;
        }
        let hess = (!qf.quad.is_empty()).then(|| dense_hessian(&qf, n));
        rows.push(Row {
            a,
            b: qf.constant,
            hess,
        });
    }
    Ok(Qp {
        n,
        m: p.n_ineq(),
        q: dense_hessian(&f, n),
        c,
        rows,
    })
}

struct Candidate {
    x: DVector<f64>,
    /// Multipliers for every row (zero when inactive).
    nu: Vec<f64>,
    active: Vec<usize>,
}

pub fn oracle_solve(p: &Problem) -> Result<OracleSolution, OracleError> {
    let total = p.n_ineq() + p.n_eq();
    if total > MAX_ENUM_ROWS {
        return Err(OracleError::TooLarge {
            rows: total,
            limit: MAX_ENUM_ROWS,
        });
    }
    let qp = extract(p)?;
    let quadratic = qp.rows.iter().any(|r| r.hess.is_some());
    if quadratic && total > MAX_QUAD_ROWS {
        return Err(OracleError::TooLarge {
            rows: total,
            limit: MAX_QUAD_ROWS,
        });
    }

    let mut best: Option<(f64, Candidate)> = None;
    let mut consider = |cand: Candidate| -> Result<(), OracleError> {
        let x: Vec<f64> = cand.x.iter().copied().collect();
        let f = p.objective_value(&x)?;
        if best
            .as_ref()
            .is_none_or(|(bf, _)| f < *bf - 1e-12 * (1.0 + bf.abs()))
        {
            best = Some((f, cand));
        }
        Ok(())
    };

    if quadratic {
        let starts = newton_starts(&qp);
        for mask in 0u32..(1u32 << qp.m) {
            let active = active_rows(&qp, mask);
            for x0 in &starts {
                if let Some(c) = newton_subset(&qp, &active, x0) {
                    if valid(&qp, &c) {
                        consider(c)?;
                        break;
                    }
                }
            }
        }
    } else if let Some(chol) = qp.q.clone().cholesky() {
        // Schur complement on the constraint space.
        let r_count = qp.rows.len();
        let mut ct = DMatrix::zeros(qp.n, r_count);
        for (i, r) in qp.rows.iter().enumerate() {
            ct.set_column(i, &r.a);
        }
        let y = chol.solve(&ct);
        let x_u = -chol.solve(&qp.c);
        let g_mat = ct.transpose() * &y;
        let resid: Vec<f64> = qp.rows.iter().map(|r| r.value(&x_u)).collect();
        for mask in 0u32..(1u32 << qp.m) {
            let active = active_rows(&qp, mask);
            if let Some(c) = schur_subset(&qp, &active, &g_mat, &resid, &y, &x_u) {
                if valid(&qp, &c) {
                    consider(c)?;
                }
            }
        }
    } else {
        for mask in 0u32..(1u32 << qp.m) {
            let active = active_rows(&qp, mask);
            if let Some(c) = kkt_subset(&qp, &active) {
                if valid(&qp, &c) {
                    consider(c)?;
                }
            }
        }
    }

    let Some((_, mut cand)) = best else {
        return Err(OracleError::Infeasible);
    };
    if !quadratic {
        if let Some(polished) = kkt_subset(&qp, &cand.active) {
            if valid(&qp, &polished) {
                cand = polished;
            }
        }
    }
    let x_star: Vec<f64> = cand.x.iter().copied().collect();
    let f_star = p.objective_value(&x_star)?;
    Ok(OracleSolution {
        x_star,
        lambda_star: cand.nu[..qp.m].to_vec(),
        mu_star: cand.nu[qp.m..].to_vec(),
        f_star,
        active_set: cand.active,
    })
}

fn active_rows(qp: &Qp, mask: u32) -> Vec<usize> {
    (0..qp.m)
        .filter(|i| mask & (1 << i) != 0)
        .chain(qp.m..qp.rows.len())
        .collect()
}

fn valid(qp: &Qp, c: &Candidate) -> bool {
    let scale = 1.0 + c.x.amax();
    for (i, r) in qp.rows.iter().enumerate().take(qp.m) {
        if c.nu[i] > DUAL_TOL * scale {
            return false;
        }
        if !c.active.contains(&i) && r.value(&c.x) < -FEAS_TOL * scale {
            return false;
        }
    }
    c.x.iter().all(|v| v.is_finite())
}

fn schur_subset(
    qp: &Qp,
    active: &[usize],
    g_mat: &DMatrix<f64>,
    resid: &[f64],
    y: &DMatrix<f64>,
    x_u: &DVector<f64>,
) -> Option<Candidate> {
    let k = active.len();
    let mut nu_full = vec![0.0; qp.rows.len()];
    if k == 0 {
        return Some(Candidate {
            x: x_u.clone(),
            nu: nu_full,
            active: Vec::new(),
        });
    }
    let gss = DMatrix::from_fn(k, k, |a, b| g_mat[(active[a], active[b])]);
    let rs = DVector::from_fn(k, |a, _| resid[active[a]]);
    let nu = solve_checked(gss, &rs)?;
    let mut x = x_u.clone();
    for (a, &row) in active.iter().enumerate() {
        x -= y.column(row) * nu[a];
        nu_full[row] = nu[a];
    }
    Some(Candidate {
        x,
        nu: nu_full,
        active: active.to_vec(),
    })
}

fn solve_checked(mat: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = mat.amax().max(1e-300);
    let lu = mat.clone().lu();
    let sol = lu.solve(rhs)?;
    let res = &mat * &sol - rhs;
    // A nearly singular system shows up as a large residual or a huge
    // solution; either way the subset is degenerate.
    if !sol.iter().all(|v| v.is_finite())
        || res.amax() > 1e-9 * (scale * sol.amax() + rhs.amax()).max(1e-12)
    {
        return None;
    }
    let diag_min = lu
        .u()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if diag_min < 1e-13 * scale {
        return None;
    }
    Some(sol)
}

/// Full KKT system `[Q Aᵀ; A 0] [x; ν] = [-c; -b]` for linear rows.
fn kkt_subset(qp: &Qp, active: &[usize]) -> Option<Candidate> {
    let (n, k) = (qp.n, active.len());
    let mut kmat = DMatrix::zeros(n + k, n + k);
    kmat.view_mut((0, 0), (n, n)).copy_from(&qp.q);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&qp.c));
    for (a, &row) in active.iter().enumerate() {
        let r = &qp.rows[row];
        for j in 0..n {
            kmat[(n + a, j)] = r.a[j];
            kmat[(j, n + a)] = r.a[j];
        }
        rhs[n + a] = -r.b;
    }
    let mut sol = solve_checked(kmat.clone(), &rhs)?;
    // One step of iterative refinement.
    let res = &rhs - &kmat * &sol;
    if let Some(d) = kmat.lu().solve(&res) {
        sol += d;
    }
    let mut nu = vec![0.0; qp.rows.len()];
    for (a, &row) in active.iter().enumerate() {
        nu[row] = sol[n + a];
    }
    Some(Candidate {
        x: sol.rows(0, n).into_owned(),
        nu,
        active: active.to_vec(),
    })
}

fn newton_starts(qp: &Qp) -> Vec<DVector<f64>> {
    let mut starts = vec![DVector::zeros(qp.n)];
    if let Some(chol) = qp.q.clone().cholesky() {
        starts.push(-chol.solve(&qp.c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b6b74);
    for _ in 0..4 {
        starts.push(DVector::from_fn(qp.n, |_, _| rng.random_range(-1.0..1.0)));
    }
    starts
}

fn newton_residual(qp: &Qp, active: &[usize], x: &DVector<f64>, nu: &DVector<f64>) -> DVector<f64> {
    let n = qp.n;
    let mut f = DVector::zeros(n + active.len());
    let mut stat = &qp.q * x + &qp.c;
    for (a, &row) in active.iter().enumerate() {
        stat += qp.rows[row].gradient(x) * nu[a];
        f[n + a] = qp.rows[row].value(x);
    }
    f.rows_mut(0, n).copy_from(&stat);
    f
}

fn newton_subset(qp: &Qp, active: &[usize], x0: &DVector<f64>) -> Option<Candidate> {
    let (n, k) = (qp.n, active.len());
    let mut x = x0.clone();
    let mut nu = DVector::zeros(k);
    let mut f = newton_residual(qp, active, &x, &nu);
    for _ in 0..80 {
        let fnorm = f.amax();
        if fnorm <= 1e-12 * (1.0 + x.amax()) {
            let mut nu_full = vec![0.0; qp.rows.len()];
            for (a, &row) in active.iter().enumerate() {
                nu_full[row] = nu[a];
            }
            return Some(Candidate {
                x,
                nu: nu_full,
                active: active.to_vec(),
            });
        }
        let mut jac = DMatrix::zeros(n + k, n + k);
        let mut hl = qp.q.clone();
        for (a, &row) in active.iter().enumerate() {
            let r = &qp.rows[row];
            if let Some(h) = &r.hess {
                hl += h * nu[a];
            }
            let gr = r.gradient(&x);
            for j in 0..n {
                jac[(n + a, j)] = gr[j];
                jac[(j, n + a)] = gr[j];
            }
        }
        jac.view_mut((0, 0), (n, n)).copy_from(&hl);
        let step = jac.lu().solve(&(-&f))?;
        let mut t = 1.0;
        loop {
            let xt = &x + step.rows(0, n) * t;
            let nt = &nu + step.rows(n, k) * t;
            let ft = newton_residual(qp, active, &xt, &nt);
            if ft.amax() < fnorm || t < 1e-6 {
                x = xt;
                nu = nt;
                f = ft;
                break;
            }
            t *= 0.5;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontends::parse_ampl_subset;
    use crate::problem::normalize;

    fn problem(src: &str) -> Problem {
        normalize(parse_ampl_subset(src).unwrap().problem).unwrap()
    }

    const EQ5: &str = "var x1 >= 0; var x2 >= 0;
        minimize f: 0.5*(8*x1^2 + 4*x1*x2 + 10*x2^2) + 1.5*x1 - 2*x2 + 4;
        subject to g1: x1 - 2*x2 + 6 >= 0;
        subject to g2: 1 - x1^2 - x2^2 >= 0;
        subject to h1: 2*x1 + x2 - 2 = 0;";

    #[test]
    fn eq5_reference() {
        let s = oracle_solve(&problem(EQ5)).unwrap();
        assert!((s.x_star[0] - 0.7625).abs() < 1e-10);
        assert!((s.x_star[1] - 0.475).abs() < 1e-10);
        assert!((s.f_star - 8.371875).abs() < 1e-10);
        assert!((s.mu_star[0] + 4.275).abs() < 1e-9);
        assert_eq!(s.active_set, vec![4]);
        assert!(s.lambda_star.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn lp_vertex() {
        let s = oracle_solve(&problem(
            "var x1 >= 0; var x2 >= 0; minimize f: 2*x1 + 3*x2; subject to c: x1 + x2 >= 1;",
        ))
        .unwrap();
        assert!((s.x_star[0] - 1.0).abs() < 1e-12 && s.x_star[1].abs() < 1e-12);
        assert!((s.f_star - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_quadratic() {
        let s = oracle_solve(&problem("var a; var b; minimize f: 0.5*a^2 + 0.5*b^2;")).unwrap();
        assert_eq!(s.x_star, vec![0.0, 0.0]);
        assert_eq!(s.f_star, 0.0);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn rejects_non_qp_and_large() {
        let e = oracle_solve(&problem("var x; minimize f: exp(x);")).unwrap_err();
        assert!(matches!(e, OracleError::NotQp(_)));
        let mut src = String::from("var x; minimize f: x^2;");
        for i in 0..21 {
            src.push_str(&format!("subject to c{i}: x >= -{i};"));
        }
        assert!(matches!(
            oracle_solve(&problem(&src)),
            Err(OracleError::TooLarge { rows: 21, .. })
        ));
    }

    #[test]
    fn infeasible_detected() {
        let e = oracle_solve(&problem(
            "var x; minimize f: x^2; subject to a: x >= 1; subject to b: x <= 0;",
        ));
        assert_eq!(e.unwrap_err(), OracleError::Infeasible);
    }

    #[test]
    fn active_ball_constraint() {
        // Minimizing distance to (2, 0) inside the unit disc lands at (1, 0)
        // with multiplier -1: grad f = (2(x-2), 2y) = (-2, 0), grad g = (-2, 0).
        let s = oracle_solve(&problem(
            "var x; var y; minimize f: (x - 2)^2 + y^2; subject to disc: 1 - x^2 - y^2 >= 0;",
        ))
        .unwrap();
        assert!((s.x_star[0] - 1.0).abs() < 1e-10 && s.x_star[1].abs() < 1e-10);
        assert!((s.lambda_star[0] + 1.0).abs() < 1e-9);
    }
}
