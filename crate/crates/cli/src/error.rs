use std::path::PathBuf;

use kktsynth_core::frontends::ParseError;
use kktsynth_core::netlist::{IdealError, SynthError};
use kktsynth_core::pipeline::SolveError;
use kktsynth_core::sim::WaveformError;
use kktsynth_core::verify::bench::BenchError;
use kktsynth_core::ProblemError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const NOT_SETTLED: u8 = 2;
    pub const VERIFY: u8 = 3;
    pub const DEGREE: u8 = 4;
    pub const GATE: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: cannot tell the input format from the extension; pass --format mps or --format ampl", .0.display())]
    UnknownFormat(PathBuf),
    #[error("unknown format `{0}` (expected mps or ampl)")]
    FormatName(String),
    #[error("{}:{}", path.display(), source)]
    Parse { path: PathBuf, source: ParseError },
    #[error("{}: {source}", path.display())]
    Problem { path: PathBuf, source: ProblemError },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("netlist does not reduce to ideal elements: {0}")]
    Ideal(#[from] IdealError),
    #[error("writing waveform: {0}")]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{}: invalid suite file: {source}", path.display())]
    Suite {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("KKTSYNTH_THREADS must be a positive integer, got `{0}`")]
    Threads(String),
    #[error("evaluation failed: {0}")]
    Eval(#[from] kktsynth_core::EvalError),
    #[error("{0}")]
    Method(#[from] kktsynth_core::method::MethodError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Problem {
                source: ProblemError::Degree { .. },
                ..
            }
            | CliError::Synth(SynthError::Degree { .. }) => exit::DEGREE,
            _ => exit::USAGE,
        }
    }
}
