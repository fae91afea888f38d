use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of its domain.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    /// The sorption rate breaks nonnegativity or monotonicity in r.
    #[error("rate model validation failed: {0}")]
    ModelValidation(String),

    #[error("kernel validation failed: {0}")]
    KernelValidation(String),

    #[error("initial data rejected: {0}")]
    InitialData(String),

    #[error("normalization failed: {0}")]
    Normalization(String),

    /// The time step breaks at least one of the stability inequalities.
    #[error(
        "time step {dt:e} violates the stability condition: \
         transport 4*dt/dr*V_sup = {transport_margin:.6} (must be < 1, dt_max = {dt_max_transport:e}), \
         coagulation 2*K*M_in*(1+P)*dt = {coag_margin:.6} (must be < 1, dt_max = {dt_max_coag:e}), \
         positivity dt*(W/dr+K*M_in) = {positivity_margin:.6} (must be < 1, dt_max = {dt_max_positivity:e})"
    )]
    Cfl {
        dt: f64,
        transport_margin: f64,
        coag_margin: f64,
        positivity_margin: f64,
        dt_max_transport: f64,
        dt_max_coag: f64,
        dt_max_positivity: f64,
    },

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical { .. } => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Domain(_) => "domain",
            Error::ModelValidation(_) => "model-validation",
            Error::KernelValidation(_) => "kernel-validation",
            Error::InitialData(_) => "initial-data",
            Error::Normalization(_) => "normalization",
            Error::Cfl { .. } => "cfl",
            Error::Numerical { .. } => "numerical",
            Error::Io { .. } => "io",
        }
    }
}
