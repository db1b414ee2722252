//! `kktsynth (solve|synth|bench|check) <input> [flags]`

mod error;
mod report;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kktsynth_core::frontends::{parse_source, SourceFormat};
use kktsynth_core::method::{compile, CircuitGains, SolverMethod};
use kktsynth_core::netlist::{
    component_census, emit_spice, expected_census, synthesize, IdealCircuit, Netlist,
};
use kktsynth_core::pipeline::{solve, SolveOptions};
use kktsynth_core::sim::write_waveform;
use kktsynth_core::verify::bench::{bench, write_bench_csv, SuiteSpec};
use kktsynth_core::{differentiate, normalize, GradientSet, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use error::{exit, CliError};

#[derive(Parser)]
#[command(
    name = "kktsynth",
    version,
    about = "Compile optimization problems into analog KKT-solver circuits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the solver dynamics and certify the settled point.
    Solve(SolveArgs),
    /// Emit a SPICE netlist and print its component census.
    Synth(SynthArgs),
    /// Run a benchmark suite of generated problems.
    Bench(BenchArgs),
    /// Parse and compile a problem, then check the netlist against the dynamics.
    Check(CheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Args)]
struct InputArgs {
    /// Problem file (`.mod` for the AMPL subset, `.mps` for MPS).
    input: PathBuf,
    /// Input format, overriding the file extension: `mps` or `ampl`.
    #[arg(long)]
    format: Option<String>,
    /// Solver dynamics: penalty, primal-dual or aug-lagrangian.
    #[arg(long, default_value = "aug-lagrangian")]
    method: SolverMethod,
}

/// Component values replacing the defaults.
#[derive(Args)]
struct GainArgs {
    /// Integrator input resistor R_γ.
    #[arg(long, value_name = "OHMS")]
    r_gamma: Option<f64>,
    /// Integrator capacitor C_γ.
    #[arg(long, value_name = "FARADS")]
    c_gamma: Option<f64>,
    /// Proportional feedback resistor R_ρ (κ_p = R_ρ/R_o).
    #[arg(long, value_name = "OHMS")]
    r_rho: Option<f64>,
    /// Integral feedback capacitor C_ρ (κ_I = 1/(R_o C_ρ)).
    #[arg(long, value_name = "FARADS")]
    c_rho: Option<f64>,
    /// Constraint stage input scale R_o.
    #[arg(long, value_name = "OHMS")]
    r_o: Option<f64>,
    /// Clipper resistors R_lim.
    #[arg(long, value_name = "OHMS")]
    r_lim: Option<f64>,
}

impl GainArgs {
    fn gains(&self) -> CircuitGains {
        let d = CircuitGains::default();
        CircuitGains {
            r_gamma: self.r_gamma.unwrap_or(d.r_gamma),
            c_gamma: self.c_gamma.unwrap_or(d.c_gamma),
            r_rho: self.r_rho.unwrap_or(d.r_rho),
            c_rho: self.c_rho.unwrap_or(d.c_rho),
            r_o: self.r_o.unwrap_or(d.r_o),
            r_lim: self.r_lim.unwrap_or(d.r_lim),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    gains: GainArgs,
    /// Simulated horizon in seconds (default: twenty primal time constants).
    #[arg(long, value_name = "SECONDS")]
    t_stop: Option<f64>,
    /// Relative integration tolerance; the absolute tolerance follows at 1e-3 of it.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Relative settling band.
    #[arg(long)]
    settle_rel: Option<f64>,
    /// Solution JSON path (default: standard output).
    #[arg(short = 'o', long, value_name = "PATH")]
    solution: Option<PathBuf>,
    /// Also emit the netlist compiled from the same problem.
    #[arg(long, value_name = "PATH")]
    netlist: Option<PathBuf>,
    /// Primal and dual trajectories as CSV.
    #[arg(long, value_name = "PATH")]
    waveform: Option<PathBuf>,
    /// Clamp the inequality integrators while their constraint holds.
    #[arg(long, value_enum, default_value = "on", default_missing_value = "on", num_args = 0..=1)]
    anti_windup: Toggle,
    /// End the run once the scaled field stays below 1e-10 for 100 steps.
    #[arg(long, value_enum, default_value = "on", default_missing_value = "on", num_args = 0..=1)]
    early_stop: Toggle,
    /// Compare the settled point with the active-set oracle (quadratic problems only).
    #[arg(long, value_enum, default_value = "off", default_missing_value = "on", num_args = 0..=1)]
    oracle_check: Toggle,
    /// Fail with exit 3 when a penalty run leaves an equality residual.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    gains: GainArgs,
    /// Netlist path (default: the input path with a `.cir` extension).
    #[arg(short = 'o', long, value_name = "PATH")]
    netlist: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite file (JSON).
    input: PathBuf,
    /// Directory receiving `bench.csv` and `summary.json`.
    #[arg(short = 'o', long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    gains: GainArgs,
    /// Random states at which the circuit and the dynamics are compared.
    #[arg(long, default_value_t = 50)]
    samples: usize,
}

struct Compiled {
    problem: Arc<Problem>,
    gradients: Arc<GradientSet>,
    warnings: usize,
}

fn load(args: &InputArgs) -> Result<Compiled, CliError> {
    let path = &args.input;
    let format = match &args.format {
        Some(name) => {
            SourceFormat::from_name(name).ok_or_else(|| CliError::FormatName(name.clone()))?
        }
        None => {
            SourceFormat::from_path(path).ok_or_else(|| CliError::UnknownFormat(path.clone()))?
        }
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed = parse_source(&text, format).map_err(|source| CliError::Parse {
        path: path.clone(),
        source,
    })?;
    for w in &parsed.warnings {
        eprintln!("{}:{w}", path.display());
    }
    let problem = normalize(parsed.problem).map_err(|source| CliError::Problem {
        path: path.clone(),
        source,
    })?;
    let gradients = differentiate(&problem);
    Ok(Compiled {
        problem: Arc::new(problem),
        gradients: Arc::new(gradients),
        warnings: parsed.warnings.len(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_netlist(nl: &Netlist, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    emit_spice(nl, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn write_json(value: &serde_json::Value, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("JSON values always serialize") + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("<stdout>", e)),
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<u8, CliError> {
    let c = load(&args.input)?;
    let gains = args.gains.gains();
    let mut sim = SolveOptions::default_sim(gains.gamma());
    if let Some(t) = args.t_stop {
        sim.t_stop = t;
    }
    if let Some(r) = args.rel_tol {
        sim.rel_tol = r;
        sim.abs_tol = r * 1e-3;
    }
    if let Some(s) = args.settle_rel {
        sim.settle_rel = s;
    }
    sim.early_stop = args.early_stop.on();
    let opts = SolveOptions {
        method: args.input.method,
        gains,
        sim: Some(sim),
        anti_windup: args.anti_windup.on(),
        oracle_check: args.oracle_check.on(),
        ..SolveOptions::default()
    };
    if let Some(path) = &args.netlist {
        let nl = synthesize(&c.problem, &c.gradients, opts.method, gains, None)?;
        write_netlist(&nl, path)?;
    }
    let run = solve(c.problem.clone(), c.gradients.clone(), &opts)?;
    write_json(
        &report::solution_json(&c.problem, &run.report),
        args.solution.as_deref(),
    )?;
    if let Some(path) = &args.waveform {
        let mut w = create(path)?;
        write_waveform(&run.system, &run.trajectory, &mut w)?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }

    let r = &run.report;
    if !r.settled {
        eprintln!(
            "error: trajectory did not settle within t_stop = {:e} s (increase --t-stop)",
            opts.sim_config().t_stop
        );
        return Ok(exit::NOT_SETTLED);
    }
    let failing = r.kkt.failing();
    if failing.is_empty() {
        return Ok(exit::OK);
    }
    let detail = failing
        .iter()
        .map(|name| {
            let v = r
                .kkt
                .residuals()
                .into_iter()
                .find(|(n, _)| n == name)
                .map_or(f64::NAN, |(_, v)| v);
            format!("{name} = {v:e}")
        })
        .collect::<Vec<_>>()
        .join(", ");
    let penalty_bias = r.method == SolverMethod::Penalty && failing == ["primal_eq"];
    if penalty_bias && !args.strict {
        eprintln!(
            "warning: KKT residual above {:e}: {detail}; the penalty method leaves a steady-state equality error that shrinks as κ_p = R_ρ/R_o grows",
            r.kkt.tol
        );
        Ok(exit::OK)
    } else {
        eprintln!(
            "error: KKT check failed (tolerance {:e}): {detail}",
            r.kkt.tol
        );
        Ok(exit::VERIFY)
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<u8, CliError> {
    let c = load(&args.input)?;
    let method = args.input.method;
    let nl = synthesize(&c.problem, &c.gradients, method, args.gains.gains(), None)?;
    let path = args
        .netlist
        .clone()
        .unwrap_or_else(|| args.input.input.with_extension("cir"));
    write_netlist(&nl, &path)?;
    let census = component_census(&nl);
    let expected = expected_census(&c.problem, &c.gradients, method)?;
    print!("{}", report::census_text(&nl, &census, &path));
    if census != expected {
        eprintln!("error: census differs from the closed form: expected {expected:?}");
        return Ok(exit::VERIFY);
    }
    Ok(exit::OK)
}

fn bench_threads() -> Result<Option<usize>, CliError> {
    match std::env::var("KKTSYNTH_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Threads(s)),
        },
        Err(_) => Ok(None),
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, CliError> {
    let path = &args.input;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let suite: SuiteSpec = serde_json::from_str(&text).map_err(|source| CliError::Suite {
        path: path.clone(),
        source,
    })?;
    let (records, summary) = bench(&suite, bench_threads()?)?;
    fs::create_dir_all(&args.output_dir).map_err(|e| CliError::io(&args.output_dir, e))?;
    let csv_path = args.output_dir.join("bench.csv");
    write_bench_csv(&records, create(&csv_path)?)?;
    let summary_value = serde_json::to_value(&summary).expect("summary serializes");
    write_json(&summary_value, Some(&args.output_dir.join("summary.json")))?;

    for r in records.iter().filter(|r| !r.settled || r.error.is_some()) {
        let why = r.error.as_deref().unwrap_or("did not settle");
        eprintln!("{} [{}]: {why}", r.problem_id, r.method);
    }
    print!("{}", report::bench_text(&records, &summary));
    if summary.gate_pass && summary.all_settled {
        Ok(exit::OK)
    } else {
        eprintln!("error: bench gate failed");
        Ok(exit::GATE)
    }
}

fn cmd_check(args: &CheckArgs) -> Result<u8, CliError> {
    let c = load(&args.input)?;
    let method = args.input.method;
    let gains = args.gains.gains();
    let nl = synthesize(&c.problem, &c.gradients, method, gains, None)?;
    let census = component_census(&nl);
    let expected = expected_census(&c.problem, &c.gradients, method)?;
    let ideal = IdealCircuit::from_netlist(&nl)?;
    // The netlist has no anti-windup clamp, so compare with it off.
    let ds = compile(c.problem.clone(), c.gradients.clone(), method, gains, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut a, mut b) = (vec![0.0; ds.dim()], vec![0.0; ds.dim()]);
    let mut worst = 0.0f64;
    for _ in 0..args.samples {
        let s: Vec<f64> = (0..ds.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        ds.rhs(&s, &mut a)?;
        ideal.derivative(&s, &mut b)?;
        let d = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / ds.gamma();
        worst = worst.max(d);
    }
    let equivalent = ideal.dim() == ds.dim() && worst <= report::EQUIVALENCE_TOL;
    let value = report::check_json(
        &c.problem,
        c.warnings,
        &nl,
        &census,
        &expected,
        args.samples,
        worst,
        equivalent,
    );
    write_json(&value, None)?;
    if equivalent && census == expected {
        Ok(exit::OK)
    } else {
        eprintln!("error: netlist check failed");
        Ok(exit::VERIFY)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            });
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
