use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] nlpot::Error),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("output error: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// 2 config, 3 numerical failure, 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        use nlpot::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 4,
            CliError::Output(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidParameter { .. }
                | E::DimensionMismatch { .. }
                | E::GridMismatch(_)
                | E::OutsideDomain(_)
                | E::Parse { .. }
                | E::Io(_) => 2,
                E::NoConvergence { .. } | E::NonIntegrable { .. } => 3,
                E::CapViolation { .. } | E::MonotonicityViolation { .. } | E::NegativeValue { .. } => 4,
            },
        }
    }
}
