mod common;

use common::*;
use kktsynth_core::method::{compile, CircuitGains, SolverMethod};
use kktsynth_core::sim::{integrate, settle_analysis, FnSystem, SimConfig};

const RATE: f64 = 1000.0;
const HORIZON: f64 = 5e-3;
const TOLERANCES: [f64; 7] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10];

fn decay() -> FnSystem<impl Fn(&[f64], &mut [f64])> {
    FnSystem {
        dim: 1,
        f: |y: &[f64], dy: &mut [f64]| dy[0] = -RATE * y[0],
    }
}

fn sweep_config(rel_tol: f64) -> SimConfig {
    SimConfig {
        t_stop: HORIZON,
        rel_tol,
        abs_tol: rel_tol * 1e-3,
        // Let the controller alone choose the steps.
        max_step: Some(HORIZON),
        early_stop: false,
        ..SimConfig::default()
    }
}

/// `(accepted steps, endpoint error)` per tolerance.
fn sweep() -> Vec<(f64, f64)> {
    let exact = (-RATE * HORIZON).exp();
    TOLERANCES
        .iter()
        .map(|&tol| {
            let tr = integrate(&decay(), &[1.0], &sweep_config(tol)).unwrap();
            assert_eq!(tr.final_time(), HORIZON);
            (
                tr.accepted_steps as f64,
                (tr.final_state()[0] - exact).abs(),
            )
        })
        .collect()
}

#[test]
fn halving_the_tolerance_reduces_the_error() {
    let exact = (-RATE * HORIZON).exp();
    let mut tol = 1e-4;
    let mut last = f64::INFINITY;
    while tol >= 1e-10 {
        let tr = integrate(&decay(), &[1.0], &sweep_config(tol)).unwrap();
        let err = (tr.final_state()[0] - exact).abs();
        assert!(
            err < last,
            "tolerance {tol:e}: error {err:e} not below {last:e}"
        );
        last = err;
        tol /= 2.0;
    }
}

/// Order of accuracy from a refinement sweep. A loose tolerance with a
/// step cap makes the controller take `N` equal steps, so the slope of
/// log(error) against log(h) is the method's order. For a decaying mode the
/// next term of the local error has the same sign as the leading one, so
/// the slope approaches five from above (about 5.5 at `hλ = 0.5`); the
/// check uses the asymptotic range and allows that approach.
#[test]
fn observed_order_is_between_four_and_five() {
    let exact = (-RATE * HORIZON).exp();
    let runs: Vec<(f64, f64)> = [80usize, 160, 320]
        .iter()
        .map(|&n| {
            let h = HORIZON / n as f64;
            let cfg = SimConfig {
                rel_tol: 1.0,
                abs_tol: 1.0,
                max_step: Some(h),
                ..sweep_config(1.0)
            };
            let tr = integrate(&decay(), &[1.0], &cfg).unwrap();
            assert_eq!(tr.accepted_steps, n);
            (h, (tr.final_state()[0] - exact).abs())
        })
        .collect();
    for pair in runs.windows(2) {
        let order = (pair[0].1 / pair[1].1).ln() / (pair[0].0 / pair[1].0).ln();
        assert!(
            (4.0..=5.1).contains(&order),
            "order {order} between h = {:e} and {:e}: {runs:?}",
            pair[0].0,
            pair[1].0
        );
    }
}

#[test]
fn endpoint_error_is_within_a_hundred_tolerances() {
    for (tol, (_, err)) in TOLERANCES.iter().zip(sweep()) {
        assert!(err <= 100.0 * tol, "tolerance {tol:e}: error {err:e}");
    }
}

#[test]
fn identical_inputs_give_identical_trajectories() {
    let cases = [eq5(), generated(&small_qp_specs(6)[5])];
    for shared in &cases {
        for method in SolverMethod::ALL {
            let ds = compile(
                shared.0.clone(),
                shared.1.clone(),
                method,
                CircuitGains::default(),
                true,
            )
            .unwrap();
            let cfg = long_run(0.02);
            let s0 = ds.initial_state(None).unwrap();
            let a = integrate(&ds, &s0, &cfg).unwrap();
            let b = integrate(&ds, &s0, &cfg).unwrap();
            let c = std::thread::scope(|s| {
                s.spawn(|| integrate(&ds, &s0, &cfg).unwrap())
                    .join()
                    .unwrap()
            });
            let bits = |t: &kktsynth_core::sim::Trajectory| -> Vec<u64> {
                t.times
                    .iter()
                    .chain(t.states.iter().flatten())
                    .map(|x| x.to_bits())
                    .collect()
            };
            assert_eq!(bits(&a), bits(&b), "{method}");
            assert_eq!(bits(&a), bits(&c), "{method}");
            assert_eq!(a.accepted_steps, b.accepted_steps);
        }
    }
}

/// Whenever the stationarity monitor ends a run early, the full-horizon
/// run agrees with it on the primal values.
#[test]
fn early_stop_agrees_with_full_horizon() {
    let mut cases = vec![eq5()];
    cases.extend(small_qp_specs(10).iter().map(generated));
    let mut fired = 0;
    for shared in &cases {
        for method in SolverMethod::ALL {
            let ds = compile(
                shared.0.clone(),
                shared.1.clone(),
                method,
                CircuitGains::default(),
                true,
            )
            .unwrap();
            let s0 = ds.initial_state(None).unwrap();
            let base = SimConfig {
                early_stop_tol: 1e-8,
                ..long_run(0.1)
            };
            let early = integrate(
                &ds,
                &s0,
                &SimConfig {
                    early_stop: true,
                    ..base.clone()
                },
            )
            .unwrap();
            let Some(_) = early.early_stop_at else {
                continue;
            };
            fired += 1;
            let full = integrate(
                &ds,
                &s0,
                &SimConfig {
                    early_stop: false,
                    ..base.clone()
                },
            )
            .unwrap();
            assert!(full.early_stop_at.is_none());
            let n = ds.n_primal();
            let d = inf_dist(&early.final_state()[..n], &full.final_state()[..n]);
            assert!(
                d <= base.settle_abs_floor,
                "{method}: early and full runs differ by {d:e}"
            );
        }
    }
    assert!(fired > 0, "early stop never fired");
}

/// `e^{-1000 t}` from 1 leaves the 1e-6 absolute band at `ln(1e6)/1000`,
/// about 13.8 ms.
#[test]
fn exponential_settles_at_the_analytic_time() {
    let cfg = SimConfig::default();
    let sys = decay();
    let tr = integrate(&sys, &[1.0], &cfg).unwrap();
    let s = settle_analysis(&tr, &sys, &cfg);
    assert!(s.settled);
    let analytic = 1e6f64.ln() / RATE;
    assert!((analytic - 13.8e-3).abs() < 0.05e-3);
    let k = tr.times.iter().position(|t| *t >= s.settling_time).unwrap();
    let step = tr.times[k] - tr.times[k - 1];
    assert!(
        (s.settling_time - analytic).abs() <= step,
        "settled at {:e}, analytic {analytic:e}, step {step:e}",
        s.settling_time
    );
}
