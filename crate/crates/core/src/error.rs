use thiserror::Error;

use crate::quadcore::QuadratureResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("quadrature did not converge (partial value {:e}, error estimate {:e})", partial.value, partial.error_estimate)]
    NotConverged { partial: QuadratureResult },

    #[error("empty or inverted interval [{a}, {b}]")]
    EmptyInterval { a: f64, b: f64 },

    #[error("invalid step {0}")]
    InvalidStep(f64),

    #[error("divergent argument: zeta({0})")]
    DivergentArgument(i64),

    #[error("momentum must be positive (got {0})")]
    NonPositiveMomentum(f64),

    #[error("zero offset: use decoherence_potential_photon limit path")]
    ZeroOffset,

    #[error("Λ integral diverges")]
    LambdaDivergent,

    #[error("unphysical effective mass {0}")]
    UnphysicalMass(f64),

    #[error("time step exceeds stability bound ({dt:e} > {bound:e})")]
    StabilityViolation { dt: f64, bound: f64 },

    #[error("decoherence function must vanish on the diagonal (F(0) = {0:e})")]
    DiagonalDecoherence(f64),

    #[error("edge amplitude {ratio:e} of peak exceeds {limit:e}; enlarge the grid")]
    EdgeAmplitude { ratio: f64, limit: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::LambdaDivergent
                | Error::EdgeAmplitude { .. }
        )
    }
}
