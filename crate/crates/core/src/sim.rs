//! Transient simulation of the compiled dynamics.
//!
//! Integration uses the Dormand–Prince 5(4) pair with local extrapolation,
//! an RMS error norm and the usual safety-factor step controller.
//! Settling is measured after the fact against the final state.

use std::io::Write;

use thiserror::Error;

use crate::expr::EvalError;
use crate::method::DynamicalSystem;

/// An autonomous ODE `y' = F(y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError>;

    /// Post-step state correction. Returns true if `y` was changed.
    fn project(&self, _y: &mut [f64]) -> bool {
        false
    }

    /// Multiplier turning `‖F(y)‖∞` into the stationarity proxy.
    fn monitor_scale(&self) -> f64 {
        1.0
    }

    /// Leading components that settling is judged on.
    fn settle_components(&self) -> usize {
        self.dim()
    }
}

impl OdeSystem for DynamicalSystem {
    fn dim(&self) -> usize {
        DynamicalSystem::dim(self)
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        DynamicalSystem::rhs(self, y, dy)
    }

    fn project(&self, y: &mut [f64]) -> bool {
        let n = self.n_primal();
        let before: Vec<f64> = y[n..].to_vec();
        DynamicalSystem::project(self, y);
        before != y[n..]
    }

    fn monitor_scale(&self) -> f64 {
        1.0 / self.gamma()
    }

    fn settle_components(&self) -> usize {
        self.n_primal()
    }
}

/// Wraps a closure as an [`OdeSystem`].
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        (self.f)(y, dy);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_stop: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Defaults to `t_stop / 100` when `None`.
    pub max_step: Option<f64>,
    pub min_step: f64,
    pub settle_rel: f64,
    pub settle_abs_floor: f64,
    pub record_stride: usize,
    pub early_stop: bool,
    pub early_stop_tol: f64,
    pub early_stop_steps: usize,
    pub divergence_bound: f64,
}

impl SimConfig {
    /// Defaults with a horizon of twenty primal time constants.
    pub fn for_gamma(gamma: f64) -> SimConfig {
        SimConfig {
            t_stop: 20.0 / gamma,
            ..SimConfig::default()
        }
    }

    pub fn max_step(&self) -> f64 {
        self.max_step.unwrap_or(self.t_stop / 100.0)
    }

    fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("t_stop", self.t_stop),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step()),
            ("min_step", self.min_step),
            ("settle_rel", self.settle_rel),
            ("settle_abs_floor", self.settle_abs_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record_stride must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_stop: 20e-3,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            max_step: None,
            min_step: 1e-15,
            settle_rel: 1e-4,
            settle_abs_floor: 1e-6,
            record_stride: 1,
            early_stop: true,
            early_stop_tol: 1e-10,
            early_stop_steps: 100,
            divergence_bound: 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state component {component} reached {value:e} at t = {t:e} s; the compiled system is unstable or ill-posed")]
    Divergence {
        t: f64,
        component: usize,
        value: f64,
    },
    #[error("step size {step:e} fell below the minimum at t = {t:e} s; the system is too stiff for the explicit integrator, try lowering kappa_I (raise C_rho) or kappa_p (lower R_rho)")]
    StepUnderflow { t: f64, step: f64 },
    #[error("evaluation failed at t = {t:e} s: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("initial state has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid simulation settings: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    /// Time at which the stationarity monitor stopped the run, if it did.
    pub early_stop_at: Option<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
/// Step-controller exponents (proportional part on the current error,
/// integral part on the previous accepted error).
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Difference between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const _: () = assert!(C2 < C3 && C3 < C4 && C4 < C5);

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rms_scaled(v: &[f64], y: &[f64], cfg: &SimConfig) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v
        .iter()
        .zip(y)
        .map(|(e, yi)| {
            let r = e / (cfg.abs_tol + cfg.rel_tol * yi.abs());
            r * r
        })
        .sum();
    (s / v.len() as f64).sqrt()
}

struct Stepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    evals: usize,
}

impl<S: OdeSystem + ?Sized> Stepper<'_, S> {
    fn eval(&mut self, stage: usize, t: f64) -> Result<(), SimError> {
        self.evals += 1;
        let (tmp, k) = (&self.tmp, &mut self.k);
        self.sys
            .rhs(tmp, &mut k[stage])
            .map_err(|source| SimError::Eval { t, source })
    }

    fn stage(&mut self, y: &[f64], h: f64, coeffs: &[(usize, f64)]) {
        for (i, (out, yi)) in self.tmp.iter_mut().zip(y).enumerate() {
            let acc: f64 = coeffs.iter().map(|&(s, a)| a * self.k[s][i]).sum();
            *out = yi + h * acc;
        }
    }

    /// One trial step from `(t, y)` with `k[0] = F(y)`. Leaves the
    /// fifth-order solution in `ynew`, `F(ynew)` in `k[6]` and returns the
    /// error estimate vector in `err`.
    fn step(
        &mut self,
        t: f64,
        y: &[f64],
        h: f64,
        ynew: &mut [f64],
        err: &mut [f64],
    ) -> Result<(), SimError> {
        self.stage(y, h, &[(0, A21)]);
        self.eval(1, t + C2 * h)?;
        self.stage(y, h, &[(0, A31), (1, A32)]);
        self.eval(2, t + C3 * h)?;
        self.stage(y, h, &[(0, A41), (1, A42), (2, A43)]);
        self.eval(3, t + C4 * h)?;
        self.stage(y, h, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
        self.eval(4, t + C5 * h)?;
        self.stage(y, h, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
        self.eval(5, t + h)?;
        self.stage(y, h, &[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)]);
        ynew.copy_from_slice(&self.tmp);
        self.eval(6, t + h)?;
        let k = &self.k;
        for i in 0..y.len() {
            err[i] = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        Ok(())
    }
}

/// Integrates `sys` from `y0` over `[0, cfg.t_stop]`.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(SimError::LengthMismatch {
            got: y0.len(),
            expected: n,
        });
    }
    let t_stop = cfg.t_stop;
    let max_step = cfg.max_step().min(t_stop);
    let mut st = Stepper {
        sys,
        k: std::array::from_fn(|_| vec![0.0; n]),
        tmp: y0.to_vec(),
        evals: 0,
    };
    let mut y = y0.to_vec();
    sys.project(&mut y);
    check_bounds(&y, 0.0, cfg)?;
    st.tmp.copy_from_slice(&y);
    st.eval(0, 0.0)?;

    let mut tr = Trajectory {
        times: vec![0.0],
        states: vec![y.clone()],
        accepted_steps: 0,
        rejected_steps: 0,
        rhs_evals: 0,
        early_stop_at: None,
    };

    let mut h = initial_step(&mut st, &y, cfg, max_step)?;
    let mut t = 0.0;
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut quiet_steps = 0usize;
    let mut last_rejected = false;
    let mut prev_err = 1e-4f64;
    let scale = sys.monitor_scale();

    while t < t_stop {
        let remaining = t_stop - t;
        if remaining <= 1e-12 * t_stop {
            // Rounding left a sliver; the previous point already is the end.
            *tr.times.last_mut().unwrap() = t_stop;
            break;
        }
        let last = h + 1e-9 * t_stop >= remaining;
        if last {
            h = remaining;
        }
        if h < cfg.min_step {
            return Err(SimError::StepUnderflow { t, step: h });
        }
        // A stage that leaves the domain of the field (overflow, log of a
        // non-positive value) is an overshoot: retry with a smaller step.
        let mut e = 0.0;
        if let Err(failure) = st.step(t, &y, h, &mut ynew, &mut err) {
            if h * 0.2 < cfg.min_step {
                return Err(failure);
            }
            e = f64::INFINITY;
        } else if n > 0 {
            let mut s = 0.0;
            for i in 0..n {
                let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(ynew[i].abs());
                let r = err[i] / sc;
                s += r * r;
            }
            e = (s / n as f64).sqrt();
        }
        if !e.is_finite() {
            e = f64::INFINITY;
        }

        if e <= 1.0 {
            t = if last { t_stop } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            if sys.project(&mut y) {
                st.tmp.copy_from_slice(&y);
                st.eval(6, t)?;
            }
            check_bounds(&y, t, cfg)?;
            st.k.swap(0, 6);
            tr.accepted_steps += 1;
            if tr.accepted_steps.is_multiple_of(cfg.record_stride) || t >= t_stop {
                tr.times.push(t);
                tr.states.push(y.clone());
            }

            if cfg.early_stop && t < t_stop {
                if inf_norm(&st.k[0]) * scale < cfg.early_stop_tol {
                    quiet_steps += 1;
                } else {
                    quiet_steps = 0;
                }
                if quiet_steps >= cfg.early_stop_steps {
                    tr.early_stop_at = Some(t);
                    if *tr.times.last().unwrap() < t {
                        tr.times.push(t);
                        tr.states.push(y.clone());
                    }
                    tr.times.push(t_stop);
                    tr.states.push(y.clone());
                    break;
                }
            }

            // PI control damps the step-size oscillation that otherwise
            // appears once the step is limited by stability, not accuracy.
            let mut factor = if e == 0.0 {
                10.0
            } else {
                0.9 * e.powf(-PI_ALPHA) * prev_err.powf(PI_BETA)
            };
            factor = factor.clamp(0.2, 10.0);
            prev_err = e.max(1e-4);
            if last_rejected {
                factor = factor.min(1.0);
            }
            h = (h * factor).min(max_step);
            last_rejected = false;
        } else {
            tr.rejected_steps += 1;
            let factor = (0.9 * e.powf(-0.2)).clamp(0.2, 1.0);
            h *= if e.is_finite() { factor } else { 0.2 };
            last_rejected = true;
        }
    }
    tr.rhs_evals = st.evals;
    Ok(tr)
}

fn check_bounds(y: &[f64], t: f64, cfg: &SimConfig) -> Result<(), SimError> {
    for (component, &value) in y.iter().enumerate() {
        if !value.is_finite() || value.abs() > cfg.divergence_bound {
            return Err(SimError::Divergence {
                t,
                component,
                value,
            });
        }
    }
    Ok(())
}

// Starting step from the local behavior of the solution (Hairer, Nørsett &
// Wanner, "Solving ODEs I", II.4). A vanishing field starts at max_step.
fn initial_step<S: OdeSystem + ?Sized>(
    st: &mut Stepper<'_, S>,
    y: &[f64],
    cfg: &SimConfig,
    max_step: f64,
) -> Result<f64, SimError> {
    let d0 = rms_scaled(y, y, cfg);
    let d1 = rms_scaled(&st.k[0], y, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(max_step);
    for ((out, yi), k0) in st.tmp.iter_mut().zip(y).zip(&st.k[0]) {
        *out = yi + h0 * k0;
    }
    st.eval(1, h0)?;
    let diff: Vec<f64> = st.k[1].iter().zip(&st.k[0]).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, y, cfg) / h0;
    let dmax = d1.max(d2);
    if dmax <= 1e-15 {
        return Ok(max_step);
    }
    let h1 = (0.01 / dmax).powf(0.2);
    Ok((100.0 * h0).min(h1).min(max_step))
}

/// `‖F(state)‖∞` scaled by the system's monitor factor; infinite when the
/// field cannot be evaluated.
pub fn gradient_norm_monitor<S: OdeSystem + ?Sized>(sys: &S, state: &[f64]) -> f64 {
    let mut dy = vec![0.0; sys.dim()];
    match sys.rhs(state, &mut dy) {
        Ok(()) => inf_norm(&dy) * sys.monitor_scale(),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettleResult {
    pub settled: bool,
    pub settling_time: f64,
    pub final_state: Vec<f64>,
}

/// Earliest recorded time after which every settle component stays within
/// `max(settle_rel·|final|, settle_abs_floor)` of its final value. The run
/// counts as not settled when a point in the last 5% of the horizon is
/// still outside the band.
pub fn settle_analysis<S: OdeSystem + ?Sized>(
    tr: &Trajectory,
    sys: &S,
    cfg: &SimConfig,
) -> SettleResult {
    let final_state = tr.final_state().to_vec();
    let n = sys.settle_components().min(final_state.len());
    let bands: Vec<f64> = final_state[..n]
        .iter()
        .map(|r| (cfg.settle_rel * r.abs()).max(cfg.settle_abs_floor))
        .collect();
    let outside = |s: &[f64]| (0..n).any(|k| (s[k] - final_state[k]).abs() > bands[k]);
    let last_violation = (0..tr.states.len()).rev().find(|&i| outside(&tr.states[i]));
    let t0 = tr.times[0];
    let t_end = tr.final_time();
    match last_violation {
        None => SettleResult {
            settled: true,
            settling_time: t0,
            final_state,
        },
        Some(i) => {
            let tail_start = t_end - 0.05 * (t_end - t0);
            SettleResult {
                settled: tr.times[i] < tail_start,
                settling_time: tr.times.get(i + 1).copied().unwrap_or(t_end),
                final_state,
            }
        }
    }
}

/// Writes `time,v1..vN,lam1..lamM,mu1..muP` rows, one per recorded point.
pub fn write_waveform<W: Write>(
    ds: &DynamicalSystem,
    tr: &Trajectory,
    out: W,
) -> Result<(), WaveformError> {
    let mut w = csv::Writer::from_writer(out);
    let n = ds.n_primal();
    let mut header = vec!["time".to_string()];
    header.extend((1..=n).map(|k| format!("v{k}")));
    header.extend((1..=ds.problem.n_ineq()).map(|i| format!("lam{i}")));
    header.extend((1..=ds.problem.n_eq()).map(|j| format!("mu{j}")));
    w.write_record(&header)?;
    for (t, s) in tr.times.iter().zip(&tr.states) {
        let d = ds.duals(s)?;
        let row = std::iter::once(*t)
            .chain(s[..n].iter().copied())
            .chain(d.lambda)
            .chain(d.mu)
            .map(|x| format!("{x:.16e}"));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(rate: f64) -> FnSystem<impl Fn(&[f64], &mut [f64])> {
        FnSystem {
            dim: 1,
            f: move |y: &[f64], dy: &mut [f64]| dy[0] = -rate * y[0],
        }
    }

    fn cfg(t_stop: f64) -> SimConfig {
        SimConfig {
            t_stop,
            early_stop: false,
            ..SimConfig::default()
        }
    }

    #[test]
    fn exponential_endpoint() {
        let tr = integrate(&decay(1000.0), &[1.0], &cfg(5e-3)).unwrap();
        let exact = (-5.0f64).exp();
        assert_eq!(tr.final_time(), 5e-3);
        let rel = (tr.final_state()[0] - exact).abs() / exact;
        assert!(rel <= 1e-6 * 10.0, "rel error {rel}");
    }

    #[test]
    fn zero_field_takes_max_steps() {
        let zero = FnSystem {
            dim: 2,
            f: |_: &[f64], dy: &mut [f64]| dy.fill(0.0),
        };
        let c = cfg(1.0);
        let tr = integrate(&zero, &[3.0, -1.0], &c).unwrap();
        assert_eq!(tr.accepted_steps, 100);
        assert!(tr.states.iter().all(|s| s == &[3.0, -1.0]));
        for w in tr.times.windows(2) {
            assert!((w[1] - w[0] - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn times_strictly_increase() {
        let tr = integrate(&decay(1000.0), &[1.0], &cfg(20e-3)).unwrap();
        assert_eq!(tr.times[0], 0.0);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn divergence_detected() {
        let grow = FnSystem {
            dim: 1,
            f: |y: &[f64], dy: &mut [f64]| dy[0] = 1e4 * y[0],
        };
        let err = integrate(&grow, &[1.0], &cfg(1.0)).unwrap_err();
        assert!(matches!(err, SimError::Divergence { .. }));
    }

    #[test]
    fn step_underflow_detected() {
        let c = SimConfig {
            min_step: 1e-3,
            ..cfg(1.0)
        };
        let err = integrate(&decay(1e6), &[1.0], &c).unwrap_err();
        assert!(matches!(err, SimError::StepUnderflow { .. }));
        assert!(err.to_string().contains("kappa"));
    }

    #[test]
    fn settle_constant_trajectory() {
        let zero = FnSystem {
            dim: 1,
            f: |_: &[f64], dy: &mut [f64]| dy[0] = 0.0,
        };
        let c = cfg(1.0);
        let tr = integrate(&zero, &[2.0], &c).unwrap();
        let s = settle_analysis(&tr, &zero, &c);
        assert!(s.settled);
        assert_eq!(s.settling_time, 0.0);
    }

    #[test]
    fn settle_exponential() {
        let c = SimConfig {
            max_step: Some(1e-5),
            ..cfg(20e-3)
        };
        let sys = decay(1000.0);
        let tr = integrate(&sys, &[1.0], &c).unwrap();
        let s = settle_analysis(&tr, &sys, &c);
        assert!(s.settled);
        // |e^{-1000 t} - e^{-20}| = 1e-6
        let expected = -(1e-6 + (-20.0f64).exp()).ln() / 1000.0;
        assert!(
            (s.settling_time - expected).abs() <= 1e-5 + 1e-12,
            "{}",
            s.settling_time
        );
    }

    #[test]
    fn ramp_is_not_settled() {
        let ramp = FnSystem {
            dim: 1,
            f: |_: &[f64], dy: &mut [f64]| dy[0] = 1.0,
        };
        let c = cfg(1.0);
        let tr = integrate(&ramp, &[0.0], &c).unwrap();
        assert!(!settle_analysis(&tr, &ramp, &c).settled);
    }

    #[test]
    fn monitor_value() {
        assert_eq!(gradient_norm_monitor(&decay(1000.0), &[1.0]), 1000.0);
    }

    #[test]
    fn early_stop_pads_to_horizon() {
        let c = SimConfig {
            early_stop: true,
            ..SimConfig::default()
        };
        // Reaches an exact equilibrium in finite time, after which the field
        // vanishes identically.
        let sys = FnSystem {
            dim: 1,
            f: |y: &[f64], dy: &mut [f64]| dy[0] = if y[0] > 0.0 { -1.0 } else { 0.0 },
        };
        let tr = integrate(&sys, &[1.0], &SimConfig { t_stop: 100.0, ..c }).unwrap();
        let stop = tr.early_stop_at.expect("early stop fires");
        assert!(stop < 100.0);
        assert_eq!(tr.final_time(), 100.0);
        let n = tr.states.len();
        assert_eq!(tr.states[n - 1], tr.states[n - 2]);
    }
}
