//! Gradient-flow dynamics realized by the analog circuit.
//!
//! The primal node voltages follow `dv/dt = -γ ∇ₓL(v, λ, μ)` with
//! `L = f + λᵀg + μᵀh`. How the multipliers are produced depends on the
//! selected [`SolverMethod`]:
//!
//! | method               | λᵢ                      | μⱼ              | dual states                 |
//! |----------------------|-------------------------|-----------------|-----------------------------|
//! | Penalty              | `min(0, κp·gᵢ)`         | `κp·hⱼ`         | none                        |
//! | PrimalDual           | `min(0, zᵢ)`            | `wⱼ`            | `ż = κI·g`, `ẇ = κI·h`      |
//! | AugmentedLagrangian  | `min(0, κp·gᵢ + zᵢ)`    | `κp·hⱼ + wⱼ`    | `ż = κI·g`, `ẇ = κI·h`      |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::poly::QuadraticForm;
use crate::problem::{GradientSet, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    Penalty,
    PrimalDual,
    #[serde(rename = "aug-lagrangian")]
    AugmentedLagrangian,
}

impl SolverMethod {
    pub const ALL: [SolverMethod; 3] = [
        SolverMethod::Penalty,
        SolverMethod::PrimalDual,
        SolverMethod::AugmentedLagrangian,
    ];

    /// The command-line spelling.
    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Penalty => "penalty",
            SolverMethod::PrimalDual => "primal-dual",
            SolverMethod::AugmentedLagrangian => "aug-lagrangian",
        }
    }

    pub fn has_dual_states(self) -> bool {
        self != SolverMethod::Penalty
    }
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SolverMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method `{s}` (expected penalty, primal-dual or aug-lagrangian)")
            })
    }
}

/// Passive component values that set the loop gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitGains {
    pub r_gamma: f64,
    pub c_gamma: f64,
    pub r_rho: f64,
    pub c_rho: f64,
    pub r_o: f64,
    pub r_lim: f64,
}

impl Default for CircuitGains {
    fn default() -> Self {
        CircuitGains {
            r_gamma: 10e3,
            c_gamma: 100e-9,
            r_rho: 100e3,
            c_rho: 10e-9,
            r_o: 10e3,
            r_lim: 10e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MethodError {
    #[error("component value {name} = {value} must be positive and finite")]
    Gain { name: &'static str, value: f64 },
    #[error("initial point has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

impl CircuitGains {
    /// Primal integrator rate `1/(R_γ C_γ)` in 1/s.
    pub fn gamma(&self) -> f64 {
        1.0 / (self.r_gamma * self.c_gamma)
    }

    /// Proportional dual gain `R_ρ/R_o`.
    pub fn kappa_p(&self) -> f64 {
        self.r_rho / self.r_o
    }

    /// Integral dual rate `1/(R_o C_ρ)` in 1/s.
    pub fn kappa_i(&self) -> f64 {
        1.0 / (self.r_o * self.c_rho)
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        let fields = [
            ("r_gamma", self.r_gamma),
            ("c_gamma", self.c_gamma),
            ("r_rho", self.r_rho),
            ("c_rho", self.c_rho),
            ("r_o", self.r_o),
            ("r_lim", self.r_lim),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(MethodError::Gain { name, value });
            }
        }
        for (name, value) in [
            ("gamma", self.gamma()),
            ("kappa_p", self.kappa_p()),
            ("kappa_i", self.kappa_i()),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(MethodError::Gain { name, value });
            }
        }
        Ok(())
    }

    /// Gains with `R_ρ` chosen so that `κp` equals `kappa_p`.
    pub fn with_kappa_p(mut self, kappa_p: f64) -> Self {
        self.r_rho = kappa_p * self.r_o;
        self
    }
}

/// Fast evaluator for an expression. Polynomials of degree at most two are
/// flattened; anything else falls back to the tree walker.
#[derive(Debug, Clone)]
pub(crate) enum Kernel {
    Affine {
        c0: f64,
        lin: Vec<(usize, f64)>,
    },
    Quadratic {
        c0: f64,
        lin: Vec<(usize, f64)>,
        quad: Vec<(usize, usize, f64)>,
    },
    Tree(Expr),
}

impl Kernel {
    pub(crate) fn new(e: &Expr) -> Kernel {
        if let Some(c) = e.as_const() {
            return Kernel::Affine {
                c0: c,
                lin: Vec::new(),
            };
        }
        match QuadraticForm::from_expr(e) {
            Ok(q) => {
                let lin: Vec<(usize, f64)> = q.linear.into_iter().collect();
                if q.quad.is_empty() {
                    Kernel::Affine {
                        c0: q.constant,
                        lin,
                    }
                } else {
                    Kernel::Quadratic {
                        c0: q.constant,
                        lin,
                        quad: q.quad.into_iter().map(|((i, j), c)| (i, j, c)).collect(),
                    }
                }
            }
            Err(_) => Kernel::Tree(e.clone()),
        }
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Kernel::Affine { c0, lin } => {
                let v = lin.iter().fold(*c0, |acc, &(k, c)| acc + c * x[k]);
                finite(v)
            }
            Kernel::Quadratic { c0, lin, quad } => {
                let mut v = lin.iter().fold(*c0, |acc, &(k, c)| acc + c * x[k]);
                v = quad.iter().fold(v, |acc, &(i, j, c)| acc + c * x[i] * x[j]);
                finite(v)
            }
            Kernel::Tree(e) => e.eval(x),
        }
    }
}

fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

type SparseKernels = Vec<(usize, Kernel)>;

/// Compiled ODE `ṡ = F(s)` over the state layout `[v | z | w]`.
#[derive(Debug, Clone)]
pub struct DynamicalSystem {
    pub problem: Arc<Problem>,
    pub gradients: Arc<GradientSet>,
    pub method: SolverMethod,
    pub gains: CircuitGains,
    pub anti_windup: bool,
    gamma: f64,
    kappa_p: f64,
    kappa_i: f64,
    grad_f: Vec<Kernel>,
    g: Vec<Kernel>,
    h: Vec<Kernel>,
    grad_g: Vec<SparseKernels>,
    grad_h: Vec<SparseKernels>,
}

/// Compiles the dynamics for `method`.
pub fn compile(
    problem: Arc<Problem>,
    gradients: Arc<GradientSet>,
    method: SolverMethod,
    gains: CircuitGains,
    anti_windup: bool,
) -> Result<DynamicalSystem, MethodError> {
    gains.validate()?;
    let rows = |rows: &[crate::problem::SparseRow]| -> Vec<SparseKernels> {
        rows.iter()
            .map(|r| {
                r.entries
                    .iter()
                    .map(|(k, e)| (*k, Kernel::new(e)))
                    .collect()
            })
            .collect()
    };
    Ok(DynamicalSystem {
        grad_f: gradients.grad_f.iter().map(Kernel::new).collect(),
        g: problem.inequalities.iter().map(Kernel::new).collect(),
        h: problem.equalities.iter().map(Kernel::new).collect(),
        grad_g: rows(&gradients.grad_g),
        grad_h: rows(&gradients.grad_h),
        gamma: gains.gamma(),
        kappa_p: gains.kappa_p(),
        kappa_i: gains.kappa_i(),
        problem,
        gradients,
        method,
        gains,
        anti_windup,
    })
}

/// Multipliers and constraint values at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValues {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl DynamicalSystem {
    pub fn n_primal(&self) -> usize {
        self.problem.n_vars()
    }

    pub fn n_ineq_states(&self) -> usize {
        if self.method.has_dual_states() {
            self.problem.n_ineq()
        } else {
            0
        }
    }

    pub fn n_eq_states(&self) -> usize {
        if self.method.has_dual_states() {
            self.problem.n_eq()
        } else {
            0
        }
    }

    pub fn dim(&self) -> usize {
        self.n_primal() + self.n_ineq_states() + self.n_eq_states()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kappa_p(&self) -> f64 {
        self.kappa_p
    }

    pub fn kappa_i(&self) -> f64 {
        self.kappa_i
    }

    /// `[v0 or 0 | 0 | 0]`; zero models uncharged capacitors.
    pub fn initial_state(&self, v0: Option<&[f64]>) -> Result<Vec<f64>, MethodError> {
        let mut s = vec![0.0; self.dim()];
        if let Some(v0) = v0 {
            if v0.len() != self.n_primal() {
                return Err(MethodError::LengthMismatch {
                    got: v0.len(),
                    expected: self.n_primal(),
                });
            }
            s[..v0.len()].copy_from_slice(v0);
        }
        Ok(s)
    }

    fn split<'a>(&self, state: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let n = self.n_primal();
        let m = self.n_ineq_states();
        (&state[..n], &state[n..n + m], &state[n + m..])
    }

    /// Objective gradient at `v` using the compiled kernels.
    pub fn objective_gradient(&self, v: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.grad_f.iter().map(|k| k.eval(v)).collect()
    }

    pub fn constraint_values(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        let g = self.g.iter().map(|k| k.eval(v)).collect::<Result<_, _>>()?;
        let h = self.h.iter().map(|k| k.eval(v)).collect::<Result<_, _>>()?;
        Ok((g, h))
    }

    /// λ and μ implied by `state`, together with g(v) and h(v).
    pub fn duals(&self, state: &[f64]) -> Result<DualValues, EvalError> {
        let (v, z, w) = self.split(state);
        let (g, h) = self.constraint_values(v)?;
        let kp = self.kappa_p;
        let (lambda, mu) = match self.method {
            SolverMethod::Penalty => (
                g.iter().map(|gi| (kp * gi).min(0.0)).collect(),
                h.iter().map(|hj| kp * hj).collect(),
            ),
            SolverMethod::PrimalDual => (z.iter().map(|zi| zi.min(0.0)).collect(), w.to_vec()),
            SolverMethod::AugmentedLagrangian => (
                g.iter()
                    .zip(z)
                    .map(|(gi, zi)| (kp * gi + zi).min(0.0))
                    .collect(),
                h.iter().zip(w).map(|(hj, wj)| kp * hj + wj).collect(),
            ),
        };
        Ok(DualValues { lambda, mu, g, h })
    }

    /// `∇f(v) + Σ λᵢ∇gᵢ(v) + Σ μⱼ∇hⱼ(v)` via the compiled kernels.
    pub fn lagrangian_gradient(
        &self,
        v: &[f64],
        lambda: &[f64],
        mu: &[f64],
    ) -> Result<Vec<f64>, EvalError> {
        let mut out = self.objective_gradient(v)?;
        for (row, &l) in self.grad_g.iter().zip(lambda) {
            if l != 0.0 {
                for (k, d) in row {
                    out[*k] += l * d.eval(v)?;
                }
            }
        }
        for (row, &m) in self.grad_h.iter().zip(mu) {
            if m != 0.0 {
                for (k, d) in row {
                    out[*k] += m * d.eval(v)?;
                }
            }
        }
        Ok(out)
    }

    /// Evaluates the state derivative into `out`.
    pub fn rhs(&self, state: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let n = self.n_primal();
        let m = self.n_ineq_states();
        let d = self.duals(state)?;
        let grad = self.lagrangian_gradient(&state[..n], &d.lambda, &d.mu)?;
        for (o, gl) in out[..n].iter_mut().zip(&grad) {
            *o = -self.gamma * gl;
        }
        if self.method.has_dual_states() {
            let z = &state[n..n + m];
            for (i, gi) in d.g.iter().enumerate() {
                let wound_up = self.anti_windup && z[i] >= 0.0 && *gi > 0.0;
                out[n + i] = if wound_up { 0.0 } else { self.kappa_i * gi };
            }
            for (j, hj) in d.h.iter().enumerate() {
                out[n + m + j] = self.kappa_i * hj;
            }
        }
        Ok(())
    }

    /// Anti-windup clamp applied after each accepted step: an inequality
    /// integrator may not hold positive charge while its constraint is
    /// satisfied.
    pub fn project(&self, state: &mut [f64]) {
        if !(self.anti_windup && self.method.has_dual_states()) {
            return;
        }
        let n = self.n_primal();
        let m = self.n_ineq_states();
        for i in 0..m {
            if state[n + i] > 0.0 {
                let gi = self.g[i].eval(&state[..n]).unwrap_or(f64::NAN);
                if gi > 0.0 {
                    state[n + i] = 0.0;
                }
            }
        }
    }

    /// Names for the state components, used for waveform headers.
    pub fn state_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = (1..=self.n_primal()).map(|k| format!("v{k}")).collect();
        out.extend((1..=self.n_ineq_states()).map(|i| format!("z{i}")));
        out.extend((1..=self.n_eq_states()).map(|j| format!("w{j}")));
        out
    }
}

/// Number of structural nonzeros per kernel kind, for diagnostics.
pub fn kernel_summary(ds: &DynamicalSystem) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    let all = ds
        .grad_f
        .iter()
        .chain(&ds.g)
        .chain(&ds.h)
        .chain(ds.grad_g.iter().flatten().map(|(_, k)| k))
        .chain(ds.grad_h.iter().flatten().map(|(_, k)| k));
    for k in all {
        let key = match k {
            Kernel::Affine { .. } => "affine",
            Kernel::Quadratic { .. } => "quadratic",
            Kernel::Tree(_) => "tree",
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}
