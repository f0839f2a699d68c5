use std::path::PathBuf;

use thiserror::Error;

/// A configuration value violated one of its constraints.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {field}: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(
        "roller {roller} deflection {deflection_mm:.6} mm reaches the roller radius \
         {roller_radius_mm} mm; state is outside the model's validity"
    )]
    ModelValidity {
        roller: usize,
        deflection_mm: f64,
        roller_radius_mm: f64,
    },

    #[error("integration diverged{}: {detail}; try a smaller dt", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Diverged { step: Option<usize>, detail: String },

    #[error("static equilibrium did not converge after {iterations} iterations (residual {residual:e} N)")]
    NoConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("roller {roller} center coincides with the {ring} ring center")]
    DegenerateAnchor { roller: usize, ring: &'static str },

    #[error("record has {found} rollers, config expects {expected}")]
    RollerCount { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("trajectory format versions differ: {0} vs {1}")]
    FormatVersion(u32, u32),

    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty {0}")]
    Empty(&'static str),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing trajectories (roller count, load N): {}", format_missing(.0))]
    MissingTrajectories(Vec<(usize, u64)>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {reason}")]
    TrainingDiverged {
        step: usize,
        reason: String,
        last_good: Box<crate::trainer::Checkpoint>,
    },
}

fn format_missing(entries: &[(usize, u64)]) -> String {
    entries
        .iter()
        .map(|(n, f)| format!("({n}, {f})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
