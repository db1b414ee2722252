//! Seeded random strictly convex test problems that are feasible by
//! construction.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Sparse,
    Dense,
}

impl Density {
    pub fn name(self) -> &'static str {
        match self {
            Density::Sparse => "sparse",
            Density::Dense => "dense",
        }
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Density {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(Density::Sparse),
            "dense" => Ok(Density::Dense),
            _ => Err(format!("unknown density `{s}`")),
        }
    }
}

/// Sizes and seed of one generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n: usize,
    #[serde(default)]
    pub m_lin: usize,
    #[serde(default)]
    pub m_quad: usize,
    #[serde(default)]
    pub p_eq: usize,
    pub density: Density,
}

#[derive(Debug, Clone)]
pub struct GeneratedProblem {
    pub problem: Problem,
    /// The point every constraint was built around.
    pub interior_point: Vec<f64>,
}

/// Guaranteed value of every inequality at the interior point.
pub const MARGIN: f64 = 0.1;

/// Range of the distance from the interior point to a ball center.
const BALL_OFFSET: (f64, f64) = (4.0, 12.0);
/// Nonzeros per row of the objective factor `A` in the sparse case.
const SPARSE_FACTOR_NNZ: usize = 3;
/// Cap on constraint support in the sparse case.
const SPARSE_ROW_CAP: usize = 1000;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn support(rng: &mut ChaCha8Rng, n: usize, density: Density) -> Vec<usize> {
    match density {
        Density::Dense => (0..n).collect(),
        Density::Sparse => {
            let s = (n / 10).clamp(1, SPARSE_ROW_CAP).min(n);
            let mut idx = index::sample(rng, n, s).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

fn unit_row(rng: &mut ChaCha8Rng, n: usize, density: Density) -> Vec<(usize, f64)> {
    loop {
        let row: Vec<(usize, f64)> = support(rng, n, density)
            .into_iter()
            .map(|k| (k, normal(rng)))
            .collect();
        let norm = row.iter().map(|(_, a)| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return row.into_iter().map(|(k, a)| (k, a / norm)).collect();
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn linear_expr(row: &[(usize, f64)], constant: f64) -> Expr {
    let mut t: Vec<Expr> = row
        .iter()
        .map(|&(k, a)| Expr::Prod(vec![Expr::Const(a), Expr::Var(k)]))
        .collect();
    if constant != 0.0 {
        t.push(Expr::Const(constant));
    }
    Expr::sum(t)
}

/// `½xᵀ(AᵀA + I)x + bᵀx` subject to `m_lin` half-spaces, `m_quad` balls
/// and `p_eq` hyperplanes, all built around a random interior point.
pub fn generate_problem(spec: &GeneratorSpec) -> GeneratedProblem {
    let GeneratorSpec {
        seed,
        n,
        m_lin,
        m_quad,
        p_eq,
        density,
    } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();

    // Objective Hessian Q = AᵀA + I, accumulated sparsely by (i <= j).
    let mut q: std::collections::BTreeMap<(usize, usize), f64> =
        (0..n).map(|k| ((k, k), 1.0)).collect();
    let rows_a: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|_| match density {
            Density::Dense => {
                let s = 0.7 / (n as f64).sqrt();
                (0..n).map(|k| (k, s * normal(&mut rng))).collect()
            }
            Density::Sparse => {
                let s = 0.7 / (SPARSE_FACTOR_NNZ as f64).sqrt();
                let mut idx = index::sample(&mut rng, n, SPARSE_FACTOR_NNZ.min(n)).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|k| (k, s * normal(&mut rng))).collect()
            }
        })
        .collect();
    for row in &rows_a {
        for (a, &(i, ai)) in row.iter().enumerate() {
            for &(j, aj) in &row[a..] {
                *q.entry((i, j)).or_insert(0.0) += ai * aj;
            }
        }
    }
    drop(rows_a);
    let b_scale = (10.0 / n.max(1) as f64).sqrt().min(1.0);
    let b: Vec<f64> = (0..n).map(|_| b_scale * normal(&mut rng)).collect();

    let mut f_terms = Vec::with_capacity(q.len() + n);
    for ((i, j), v) in q {
        if i == j {
            f_terms.push(Expr::Prod(vec![
                Expr::Const(0.5 * v),
                Expr::pow(Expr::Var(i), 2),
            ]));
        } else {
            f_terms.push(Expr::Prod(vec![Expr::Const(v), Expr::Var(i), Expr::Var(j)]));
        }
    }
    for (k, bk) in b.iter().enumerate() {
        f_terms.push(Expr::Prod(vec![Expr::Const(*bk), Expr::Var(k)]));
    }

    let mut inequalities = Vec::with_capacity(m_lin + m_quad);
    let mut ineq_names = Vec::with_capacity(m_lin + m_quad);
    for i in 0..m_lin {
        let row = unit_row(&mut rng, n, density);
        let at_x0: f64 = row.iter().map(|&(k, a)| a * x0[k]).sum();
        let slack = MARGIN + rng.random_range(0.0..0.5);
        inequalities.push(linear_expr(&row, slack - at_x0));
        ineq_names.push(format!("lin{}", i + 1));
    }
    for i in 0..m_quad {
        // (r² - ‖x_S - c‖²) / (2r): a ball written so its gradient has unit
        // norm on the boundary, like the linear rows. The radius clears the
        // margin at x0: (r² - d²)/(2r) >= MARGIN for r >= MARGIN + √(MARGIN² + d²).
        let s = support(&mut rng, n, density);
        let dir = unit_vector(&mut rng, s.len());
        let rho = rng.random_range(BALL_OFFSET.0..BALL_OFFSET.1);
        let center: Vec<f64> = s.iter().zip(&dir).map(|(&k, u)| x0[k] + rho * u).collect();
        let r = MARGIN + (MARGIN * MARGIN + rho * rho).sqrt() + rng.random_range(0.0..0.5);
        let w = 1.0 / (2.0 * r);
        let mut terms = Vec::with_capacity(2 * s.len() + 1);
        let mut constant = r * r * w;
        for (&k, c) in s.iter().zip(&center) {
            terms.push(Expr::Prod(vec![
                Expr::Const(-w),
                Expr::pow(Expr::Var(k), 2),
            ]));
            if *c != 0.0 {
                terms.push(Expr::Prod(vec![Expr::Const(2.0 * c * w), Expr::Var(k)]));
            }
            constant -= c * c * w;
        }
        terms.push(Expr::Const(constant));
        inequalities.push(Expr::sum(terms));
        ineq_names.push(format!("quad{}", i + 1));
    }
    let mut equalities = Vec::with_capacity(p_eq);
    let mut eq_names = Vec::with_capacity(p_eq);
    for j in 0..p_eq {
        let row = unit_row(&mut rng, n, density);
        let at_x0: f64 = row.iter().map(|&(k, a)| a * x0[k]).sum();
        equalities.push(linear_expr(&row, -at_x0));
        eq_names.push(format!("eq{}", j + 1));
    }

    GeneratedProblem {
        problem: Problem {
            var_names: (1..=n).map(|k| format!("x{k}")).collect(),
            objective: Expr::sum(f_terms),
            inequalities,
            ineq_names,
            equalities,
            eq_names,
            source_bounds: None,
        },
        interior_point: x0,
    }
}
