//! Error type shared by all pipeline stages.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch in user-supplied coefficient data. Carries the index
    /// of the offending entry.
    #[error("dimension mismatch at {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    /// Eigenvalues of the principal symbol collided (or came closer than the
    /// resolvable gap) at the recorded sample point.
    #[error("eigenvalue collision at t = {t}, |xi| = {xi_norm}: gap {gap:.3e} below {threshold:.3e}")]
    EigenvalueCollision {
        t: f64,
        xi_norm: f64,
        gap: f64,
        threshold: f64,
    },

    /// Complex eigenvalues where the strict hyperbolicity assumption
    /// requires a real spectrum.
    #[error("non-real spectrum at t = {t}, |xi| = {xi_norm}: max |Im lambda| = {imag:.3e}")]
    NonRealSpectrum { t: f64, xi_norm: f64, imag: f64 },

    /// Eigenvector matrix is numerically singular or too ill-conditioned.
    #[error("diagonaliser breakdown: {context} (condition estimate {cond:.3e})")]
    IllConditioned { context: String, cond: f64 },

    /// A limit matrix failed to converge along the probe horizon.
    #[error("divergent large-time limit: {context}")]
    DivergentLimit { context: String },

    /// The QR iteration failed to deflate within the iteration budget.
    #[error("eigenvalue iteration failed to converge for a {dim}x{dim} matrix")]
    EigenNoConvergence { dim: usize },

    /// Frame samples too sparse around the requested point for the
    /// derivative stencil.
    #[error("frame too sparse near t = {t}: nearest sample at t = {nearest}")]
    FrameTooSparse { t: f64, nearest: f64 },

    /// Requested point lies outside the zone required by the operation.
    #[error("point t = {t}, |xi| = {xi_norm} outside {zone} zone (N = {n})")]
    OutsideZone {
        t: f64,
        xi_norm: f64,
        zone: &'static str,
        n: f64,
    },

    /// Adaptive integrator exceeded its step budget or hit a step underflow.
    #[error("ODE solve failed at t = {t}: {reason}")]
    OdeFailure { t: f64, reason: String },

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge on [{a}, {b}]: estimated error {err:.3e}")]
    QuadratureFailure { a: f64, b: f64, err: f64 },

    /// Grid unsuitable for the requested regression (for instance spanning
    /// less than the required number of decades).
    #[error("degenerate fit grid: {context}")]
    DegenerateGrid { context: String },

    /// Peano-Baker series truncation could not certify the tail bound.
    #[error("series tail bound {tail:.3e} above tolerance {tol:.3e} after {terms} terms")]
    SeriesTail { tail: f64, tol: f64, terms: usize },

    /// Strong dichotomy required but not satisfied.
    #[error("strong dichotomy unverified: {context}")]
    DichotomyUnverified { context: String },

    /// Construction preconditions violated (admissibility, positivity, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
