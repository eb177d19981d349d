use thiserror::Error;

/// Failure modes shared by every layer of the simulation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsiError {
    /// The |0⟩ amplitude vanishes, so the state has no `(z1, z2)` form.
    #[error("state has a vanishing |0> amplitude ({amp0:e}) and no coefficient-pair form")]
    DegenerateState { amp0: f64 },

    /// A post-selection branch has (numerically) zero probability.
    #[error("post-selection branch has probability {prob:e}")]
    ZeroProbability { prob: f64 },

    /// The nonlinear map is undefined because a coefficient vanishes.
    /// `step` is the 1-based index of the map application that failed.
    #[error("map undefined at step {step}: coefficient magnitudes ({z1_abs:e}, {z2_abs:e})")]
    ZeroCoefficient { step: usize, z1_abs: f64, z2_abs: f64 },

    /// The equalizing angle is undefined (equal magnitudes with orthogonal phases).
    #[error("equalizing angle is indeterminate for this coefficient pair")]
    Indeterminate,

    /// Two equalizing angles coincide, so the optimized split is ambiguous.
    #[error("equalizing angles at positions {first} and {second} coincide")]
    DegenerateThetas { first: usize, second: usize },

    /// The identification loop failed to terminate within its bound.
    #[error("identification did not converge within {loops} loops")]
    NonConvergence { loops: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, QsiError>;
