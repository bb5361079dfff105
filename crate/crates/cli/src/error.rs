use hypocoerce::lattice::LatticeError;
use hypocoerce::sde::SdeError;
use hypocoerce::semigroup::SemigroupError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATED: u8 = 1;
pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_BLOWUP: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration, model or experiment parameters.
    #[error("{0}")]
    Schema(String),
    #[error("numerical blowup: {0}")]
    Blowup(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => EXIT_SCHEMA,
            CliError::Blowup(_) => EXIT_BLOWUP,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Blowup { .. } => CliError::Blowup(e.to_string()),
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<SemigroupError> for CliError {
    fn from(e: SemigroupError) -> Self {
        match e {
            SemigroupError::Sde(s) => s.into(),
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        match e {
            LatticeError::Sde(s) => s.into(),
            LatticeError::Semigroup(s) => s.into(),
            other => CliError::Schema(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blowups_map_to_their_own_code() {
        let blowup = SdeError::Blowup { failed: 3, paths: 10, path: 1, step: 7 };
        assert_eq!(CliError::from(LatticeError::Semigroup(SemigroupError::Sde(blowup))).exit_code(), EXIT_BLOWUP);
        assert_eq!(CliError::from(SdeError::Config("dt".into())).exit_code(), EXIT_SCHEMA);
        assert_eq!(CliError::from(SemigroupError::Precondition("q".into())).exit_code(), EXIT_SCHEMA);
    }
}
