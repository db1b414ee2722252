//! Benchmark sweeps over generated problems.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::generate::{generate_problem, Density, GeneratorSpec};
use super::oracle::{oracle_solve, MAX_ENUM_ROWS};
use crate::method::{CircuitGains, SolverMethod};
use crate::pipeline::{rel_error_pct, solve, SolveOptions};
use crate::problem::differentiate;
use crate::sim::SimConfig;

fn default_methods() -> Vec<SolverMethod> {
    vec![SolverMethod::AugmentedLagrangian, SolverMethod::PrimalDual]
}

fn default_gate() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub generator: GeneratorSpec,
}

impl InstanceSpec {
    pub fn label(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            let g = &self.generator;
            format!(
                "s{}_n{}_l{}_q{}_e{}_{}",
                g.seed, g.n, g.m_lin, g.m_quad, g.p_eq, g.density
            )
        })
    }
}

/// Suite file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub instances: Vec<InstanceSpec>,
    #[serde(default = "default_methods")]
    pub methods: Vec<SolverMethod>,
    /// Simulated horizon in seconds; defaults to twenty primal time
    /// constants.
    #[serde(default)]
    pub t_stop: Option<f64>,
    #[serde(default = "default_gate")]
    pub gate_mean_rel_err_pct: f64,
    #[serde(default)]
    pub gains: Option<CircuitGains>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("suite has no instances")]
    EmptySuite,
    #[error("suite lists no methods")]
    NoMethods,
    #[error("could not build the worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One (instance, method) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub problem_id: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub density: Density,
    pub method: SolverMethod,
    pub settling_time_s: Option<f64>,
    pub wall_time_s: f64,
    pub rel_error_pct: Option<f64>,
    pub kkt_pass: bool,
    pub settled: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub p05: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub runs: usize,
    pub failures: usize,
    pub settled: usize,
    pub kkt_pass: usize,
    pub mean_time_ms: Option<f64>,
    pub median_time_ms: Option<f64>,
    pub mean_rel_err_pct: Option<f64>,
    pub median_rel_err_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub mean_time_ms: Option<f64>,
    pub median_time_ms: Option<f64>,
    pub mean_rel_err_pct: Option<f64>,
    pub median_rel_err_pct: Option<f64>,
    pub per_method: BTreeMap<String, GroupStats>,
    pub time_ms_quantiles: Option<Quantiles>,
    pub rel_err_pct_quantiles: Option<Quantiles>,
    pub wall_time_ms_quantiles: Option<Quantiles>,
    pub runs: usize,
    pub all_settled: bool,
    pub gate_mean_rel_err_pct: f64,
    pub gate_pass: bool,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
}

pub fn median(xs: &[f64]) -> Option<f64> {
    quantile(xs, 0.5)
}

fn quantiles(xs: &[f64]) -> Option<Quantiles> {
    let q = |p| quantile(xs, p);
    Some(Quantiles {
        min: q(0.0)?,
        p05: q(0.05)?,
        p25: q(0.25)?,
        p50: q(0.5)?,
        p75: q(0.75)?,
        p95: q(0.95)?,
        max: q(1.0)?,
    })
}

fn group_stats(records: &[&BenchRecord]) -> GroupStats {
    let times: Vec<f64> = records
        .iter()
        .filter_map(|r| r.settling_time_s)
        .map(|t| t * 1e3)
        .collect();
    let errs: Vec<f64> = records.iter().filter_map(|r| r.rel_error_pct).collect();
    GroupStats {
        runs: records.len(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        settled: records.iter().filter(|r| r.settled).count(),
        kkt_pass: records.iter().filter(|r| r.kkt_pass).count(),
        mean_time_ms: mean(&times),
        median_time_ms: median(&times),
        mean_rel_err_pct: mean(&errs),
        median_rel_err_pct: median(&errs),
    }
}

/// Aggregates records. The gate passes when every run settled without error
/// and the mean relative objective error is available and within the limit.
pub fn summarize(records: &[BenchRecord], gate: f64) -> BenchSummary {
    let all: Vec<&BenchRecord> = records.iter().collect();
    let overall = group_stats(&all);
    let mut per_method = BTreeMap::new();
    for m in SolverMethod::ALL {
        let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.method == m).collect();
        if !rs.is_empty() {
            per_method.insert(m.name().to_string(), group_stats(&rs));
        }
    }
    let times: Vec<f64> = records
        .iter()
        .filter_map(|r| r.settling_time_s)
        .map(|t| t * 1e3)
        .collect();
    let errs: Vec<f64> = records.iter().filter_map(|r| r.rel_error_pct).collect();
    let walls: Vec<f64> = records.iter().map(|r| r.wall_time_s * 1e3).collect();
    let all_settled = records.iter().all(|r| r.settled && r.error.is_none());
    let gate_pass =
        all_settled && !records.is_empty() && overall.mean_rel_err_pct.is_some_and(|e| e <= gate);
    BenchSummary {
        mean_time_ms: overall.mean_time_ms,
        median_time_ms: overall.median_time_ms,
        mean_rel_err_pct: overall.mean_rel_err_pct,
        median_rel_err_pct: overall.median_rel_err_pct,
        per_method,
        time_ms_quantiles: quantiles(&times),
        rel_err_pct_quantiles: quantiles(&errs),
        wall_time_ms_quantiles: quantiles(&walls),
        runs: records.len(),
        all_settled,
        gate_mean_rel_err_pct: gate,
        gate_pass,
    }
}

fn run_instance(inst: &InstanceSpec, suite: &SuiteSpec) -> Vec<BenchRecord> {
    let g = &inst.generator;
    let id = inst.label();
    let gen_start = Instant::now();
    let generated = generate_problem(g);
    let problem = Arc::new(generated.problem);
    let gradients = Arc::new(differentiate(&problem));
    let f_star = if problem.n_ineq() + problem.n_eq() <= MAX_ENUM_ROWS {
        oracle_solve(&problem).ok().map(|o| o.f_star)
    } else {
        None
    };
    let setup = gen_start.elapsed().as_secs_f64();
    let gains = suite.gains.unwrap_or_default();
    suite
        .methods
        .iter()
        .map(|&method| {
            let sim = suite.t_stop.map(|t_stop| SimConfig {
                t_stop,
                ..SolveOptions::default_sim(gains.gamma())
            });
            let opts = SolveOptions {
                method,
                gains,
                sim,
                ..SolveOptions::default()
            };
            let mut rec = BenchRecord {
                problem_id: id.clone(),
                n: g.n,
                m: problem.n_ineq(),
                p: problem.n_eq(),
                density: g.density,
                method,
                settling_time_s: None,
                wall_time_s: 0.0,
                rel_error_pct: None,
                kkt_pass: false,
                settled: false,
                error: None,
            };
            let start = Instant::now();
            match solve(problem.clone(), gradients.clone(), &opts) {
                Ok(run) => {
                    let r = run.report;
                    rec.settling_time_s = Some(r.settling_time_s);
                    rec.kkt_pass = r.kkt.pass;
                    rec.settled = r.settled;
                    rec.rel_error_pct = f_star.map(|fs| rel_error_pct(r.objective, fs));
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec.wall_time_s = start.elapsed().as_secs_f64() + setup / suite.methods.len() as f64;
            rec
        })
        .collect()
}

/// Runs every (instance, method) pair. Individual failures are recorded,
/// not propagated. `threads` caps the worker count.
pub fn bench(
    suite: &SuiteSpec,
    threads: Option<usize>,
) -> Result<(Vec<BenchRecord>, BenchSummary), BenchError> {
    if suite.instances.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    if suite.methods.is_empty() {
        return Err(BenchError::NoMethods);
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    // `collect` on an indexed parallel iterator keeps instance order.
    let nested: Vec<Vec<BenchRecord>> = pool.install(|| {
        suite
            .instances
            .par_iter()
            .map(|inst| run_instance(inst, suite))
            .collect()
    });
    let records: Vec<BenchRecord> = nested.into_iter().flatten().collect();
    let summary = summarize(&records, suite.gate_mean_rel_err_pct);
    Ok((records, summary))
}

pub fn write_bench_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
