//! Source-format parsers: free-format MPS and an AMPL subset.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::problem::RawProblem;

pub mod ampl;
pub mod mps;

pub use ampl::{emit_ampl, parse_ampl_subset};
pub use mps::parse_mps;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Mps,
    AmplSubset,
}

impl SourceFormat {
    /// `.mps` and `.mod` extensions, case-insensitively.
    pub fn from_path(path: &Path) -> Option<SourceFormat> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "mps" => Some(SourceFormat::Mps),
            "mod" => Some(SourceFormat::AmplSubset),
            _ => None,
        }
    }

    /// Names accepted by the `--format` override.
    pub fn from_name(name: &str) -> Option<SourceFormat> {
        match name.to_ascii_lowercase().as_str() {
            "mps" => Some(SourceFormat::Mps),
            "ampl" | "mod" => Some(SourceFormat::AmplSubset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// A message tied to a 1-based line and column of the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseDiagnostic {
    pub fn error(line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseDiagnostic {
            severity: Severity::Error,
            line,
            column,
            message: message.into(),
        }
    }

    pub fn warning(line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseDiagnostic {
            severity: Severity::Warning,
            line,
            column,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.message)
    }
}

/// Parsing failed; `diagnostic` is the first error found.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{diagnostic}")]
pub struct ParseError {
    pub diagnostic: ParseDiagnostic,
    /// Warnings issued before the error.
    pub warnings: Vec<ParseDiagnostic>,
}

impl ParseError {
    pub(crate) fn at(line: usize, column: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            diagnostic: ParseDiagnostic::error(line, column, message),
            warnings: Vec::new(),
        }
    }
}

/// A successfully parsed problem together with any warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub problem: RawProblem,
    pub warnings: Vec<ParseDiagnostic>,
}

pub fn parse_source(text: &str, format: SourceFormat) -> Result<Parsed, ParseError> {
    match format {
        SourceFormat::Mps => parse_mps(text),
        SourceFormat::AmplSubset => parse_ampl_subset(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_detection() {
        assert_eq!(
            SourceFormat::from_path(Path::new("a/b.MPS")),
            Some(SourceFormat::Mps)
        );
        assert_eq!(
            SourceFormat::from_path(Path::new("eq5.mod")),
            Some(SourceFormat::AmplSubset)
        );
        assert_eq!(SourceFormat::from_path(Path::new("x.lp")), None);
        assert_eq!(
            SourceFormat::from_name("ampl"),
            Some(SourceFormat::AmplSubset)
        );
    }

    #[test]
    fn diagnostic_display() {
        let d = ParseDiagnostic::error(3, 7, "undeclared identifier `y`");
        assert_eq!(d.to_string(), "3:7: error: undeclared identifier `y`");
    }
}
