use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Core(#[from] dln::Error),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    ChecksFailed(String),
}

impl CliError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn missing(field: &str) -> Self {
        let flag = if field == "N" { "--N".to_string() } else { format!("--{}", field.replace('_', "-")) };
        CliError::invalid(field, format!("required; pass {flag} or set `{field}` in the config file"))
    }

    /// 1: a check failed, 2: bad input, 3: numerical failure.
    pub fn exit_code(&self) -> u8 {
        use dln::Error as E;
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Invalid { .. } | CliError::Read { .. } => 2,
            CliError::Write { .. } | CliError::Numerical(_) => 3,
            CliError::Core(e) => match e {
                E::NonSquare { .. }
                | E::DimensionMismatch(_)
                | E::RankDeficient { .. }
                | E::NotUnitary { .. }
                | E::InvalidExponent(_)
                | E::InvalidParameter { .. }
                | E::LossGradientCheck { .. }
                | E::Parse(_) => 2,
                _ => 3,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
