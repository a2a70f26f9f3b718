use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty shape")]
    EmptyShape,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{name} = {value} outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("inconsistent scales: {0}")]
    InconsistentScales(String),

    #[error("no posterior at t=1")]
    NoPosteriorAtFirstStep,

    #[error("invalid sigma: 1 - alpha_prev^2 - sigma^2 = {0}")]
    InvalidSigma(f64),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("stale tape: model changed since the forward pass")]
    StaleTape,

    #[error("skip factor too large: tau = {tau}, T = {steps}")]
    SkipFactorTooLarge { tau: usize, steps: usize },

    #[error("degenerate init: no noise scale above the stopping threshold")]
    DegenerateInit,

    #[error("legacy search unscalable: N = {0} > 6")]
    LegacySearchUnscalable(usize),

    #[error("schedule violation: {0}")]
    ScheduleViolation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            range: "(0, 1)",
        })
    }
}
