//! Maps library errors onto the process exit codes.

use std::fmt;
use topood_core::bnn::BnnError;
use topood_core::data::DataError;
use topood_core::oodtest::OodError;
use topood_core::ptu::PtuError;

/// Exit code 2: invalid configuration.
pub const EXIT_CONFIG: u8 = 2;
/// Exit code 3: unreadable or malformed data and I/O failures.
pub const EXIT_DATA: u8 = 3;
/// Exit code 4: divergence or non-finite results.
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(msg: impl fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, error: anyhow::anyhow!("{msg}") }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self { code: EXIT_DATA, error: anyhow::anyhow!("{msg}") }
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        Self { code: EXIT_NUMERIC, error: anyhow::anyhow!("{msg}") }
    }

    /// Prefixes the message with what was being done.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { code: self.code, error: self.error.context(what.to_string()) }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn bnn_code(e: &BnnError) -> u8 {
    match e {
        BnnError::Architecture(_) | BnnError::Config(_) => EXIT_CONFIG,
        BnnError::Divergence { .. } => EXIT_NUMERIC,
        BnnError::Dimension { .. } | BnnError::Snapshot(_) => EXIT_DATA,
    }
}

fn ptu_code(e: &PtuError) -> u8 {
    match e {
        PtuError::Bnn(b) => bnn_code(b),
        PtuError::Config(_) => EXIT_CONFIG,
        PtuError::Topology(_) | PtuError::Ot(_) | PtuError::Csv(_) | PtuError::Format(_) => EXIT_DATA,
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Self { code: EXIT_DATA, error: e.into() }
    }
}

impl From<BnnError> for Failure {
    fn from(e: BnnError) -> Self {
        Self { code: bnn_code(&e), error: e.into() }
    }
}

impl From<PtuError> for Failure {
    fn from(e: PtuError) -> Self {
        Self { code: ptu_code(&e), error: e.into() }
    }
}

impl From<OodError> for Failure {
    fn from(e: OodError) -> Self {
        let code = match &e {
            OodError::Config(_) => EXIT_CONFIG,
            OodError::Ptu(p) => ptu_code(p),
            OodError::SizeMismatch { .. } | OodError::Ot(_) => EXIT_DATA,
        };
        Self { code, error: e.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_DATA, error: e.into() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self { code: EXIT_DATA, error: e.into() }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self { code: EXIT_DATA, error: e.into() }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Fails with the numeric exit code when any value is NaN or infinite.
pub fn ensure_finite(values: &[f64], what: &str) -> CliResult {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Failure::numeric(format!("{what} {i} is {}", values[i]))),
        None => Ok(()),
    }
}
