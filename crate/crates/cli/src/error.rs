use std::path::PathBuf;

use ksmf_core::diagnostics::DiagnosticsError;
use ksmf_core::field::FieldError;
use ksmf_core::mixture::MixtureError;
use ksmf_core::particles::ParticleError;
use ksmf_core::pde::PdeError;
use ksmf_core::potential::PotentialError;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("numerical failure: {0}")]
    BlowUp(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt input: {0}")]
    Corrupt(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) | CliError::BlowUp(_) => EXIT_NUMERICAL,
            CliError::Io { .. } | CliError::Corrupt(_) => EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            FieldError::Corrupt(_) => CliError::Corrupt(e.to_string()),
            FieldError::InvalidGrid(_) | FieldError::Bandwidth { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::Field(f) => f.into(),
            PdeError::BlowUp { .. } => CliError::BlowUp(e.to_string()),
            PdeError::Config(_)
            | PdeError::NegativeInitialData { .. }
            | PdeError::InitialMass(_)
            | PdeError::TailMass(_)
            | PdeError::Potential(PotentialError::InvalidMollifier(_)) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ParticleError> for CliError {
    fn from(e: ParticleError) -> Self {
        match e {
            ParticleError::Field(f) => f.into(),
            ParticleError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            ParticleError::Corrupt(_) => CliError::Corrupt(e.to_string()),
            ParticleError::Config(_) | ParticleError::Mixture(_) | ParticleError::TimeGrid(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PotentialError> for CliError {
    fn from(e: PotentialError) -> Self {
        match e {
            PotentialError::InvalidMollifier(_) | PotentialError::InvalidTable(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Field(f) => f.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<MixtureError> for CliError {
    fn from(e: MixtureError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(CliError::from(PdeError::Config("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(
            CliError::from(PdeError::BlowUp { t: 0.1, max_abs: 1e7 }).exit_code(),
            EXIT_NUMERICAL
        );
        assert_eq!(CliError::from(FieldError::Corrupt("bad".into())).exit_code(), EXIT_IO);
        assert_eq!(
            CliError::from(ParticleError::Coefficient { index: 0, value: 3.0 }).exit_code(),
            EXIT_NUMERICAL
        );
    }
}
