use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("layout does not fit region: {0}")]
    LayoutDoesNotFit(String),

    #[error("pilot length {tau} is smaller than the number of users {k}")]
    TooFewPilots { tau: usize, k: usize },

    #[error("infeasible initial layout: {0}")]
    InfeasibleInit(String),

    #[error("line search exhausted (step below {min_step:e})")]
    LineSearchExhausted { min_step: f64 },

    #[error("no feasible individual found")]
    NoFeasibleIndividual,
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
