use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by the numerical modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate temperature T = {0}: Boltzmann weights are not representable")]
    DegenerateTemperature(f64),

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    #[error("singular velocity at energy {energy}, a = {a}: the density of states vanishes")]
    SingularVelocity { energy: f64, a: f64 },

    #[error("characteristic left the energy support at a = {a}")]
    DomainExit { a: f64 },

    #[error("characteristic foot {foot} lies outside the initial grid [{lo}, {hi}]; widen the grid")]
    Extrapolation { foot: f64, lo: f64, hi: f64 },

    #[error("crossing scan did not stabilise within {max_samples} samples per track pair; use a finer grid or a closed-form family")]
    Resolution { max_samples: usize },

    #[error("partition function diverges: {0}")]
    Divergence(String),

    #[error("no temperature in [{lo}, {hi}] reaches the target entropy")]
    Range { lo: f64, hi: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
