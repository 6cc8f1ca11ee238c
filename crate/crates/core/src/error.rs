use std::fmt;

use thiserror::Error;

/// A single failed model invariant, addressed by its field path (e.g. `rate.beta`).
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

impl Issue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_issues(issues: &[Issue]) -> String {
    issues.iter().map(Issue::to_string).collect::<Vec<_>>().join("; ")
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", join_issues(.0))]
    InvalidModel(Vec<Issue>),

    #[error("path covers [{start}, {end}] but [{from}, {to}] was requested")]
    PathDomain { start: f64, end: f64, from: f64, to: f64 },

    #[error("query time {t} outside [0, {limit}]")]
    QueryOutOfRange { t: f64, limit: f64 },

    #[error("tree was truncated at t={complete_until}; query at t={t} is not covered")]
    TruncatedTree { t: f64, complete_until: f64 },

    #[error("particle {label} is not alive at t={t}")]
    NotAlive { label: String, t: f64 },

    #[error("population is extinct at t={t}")]
    ExtinctionAtT { t: f64 },

    #[error("config error{}, key `{key}`: {message}", at_line(*.line))]
    Config {
        /// 1-based line in the config file, when the problem is tied to one.
        line: Option<usize>,
        key: String,
        message: String,
    },

    #[error("need at least 2 values, got {0}")]
    InsufficientData(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidModel(vec![Issue::new(field, message)])
    }

    pub(crate) fn config(line: Option<usize>, key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
