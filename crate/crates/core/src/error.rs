use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric: relative asymmetry {asymmetry:.3e} exceeds {tol:.3e}")]
    NotSymmetric { asymmetry: f64, tol: f64 },
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:.3e} (scale {scale:.3e})")]
    NotPsd { min_eig: f64, scale: f64 },
    #[error("unstable plant unsupported: spectral radius {rho:.6} >= 1")]
    UnstablePlant { rho: f64 },
    #[error("eigendecomposition failed to converge")]
    EigFailure,
    #[error("Lyapunov iteration hit the cap of {cap} iterations (residual {residual:.3e})")]
    LyapunovCap { cap: usize, residual: f64 },
    #[error("inconsistent estimator covariance: {0}")]
    InconsistentEstimator(String),
    #[error("indefinite control curvature: min eigenvalue of R + B'SB is {min_eig:.3e}")]
    IndefiniteCurvature { min_eig: f64 },
    #[error("infeasible cost guarantee: requested {requested:.6e} below the minimum achievable {minimum:.6e}")]
    InfeasibleCost { requested: f64, minimum: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("simulation diverged at step {step}: state norm {norm:.3e}")]
    SimDiverged { step: usize, norm: f64 },
    #[error("{0} requires beta > 0")]
    BetaZero(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
