//! Decay exponents and fundamental solutions for uniformly strictly
//! hyperbolic systems `D_t U = A(t, D_x) U` with time-dependent coefficients.
//!
//! The crate is organised around two phase-space zones separated by the
//! hypersurface `(1+t)|xi| = N`. In the hyperbolic zone a diagonalisation
//! hierarchy reduces the system to diagonal form modulo integrable remainders
//! and yields the envelope exponents `kappa_plus <= kappa_minus` of the
//! subprincipal symbol. In the pseudodifferential zone a Fuchs-type reduction
//! `t D_t U = (Lambda + R) U` yields the large-time exponent `mu`. Both sets
//! of predicted exponents can be verified empirically against high-accuracy
//! fundamental-solution solves, and averaged slowness surfaces with their
//! contact indices quantify the dispersive geometry of the principal part.
//!
//! Modules:
//! - [`zones`]: separating time, auxiliary weight `h(t, xi)`.
//! - [`coeff`]: scalar time-dependent coefficients with decay classes.
//! - [`models`]: symbol models (first-order families, second-order
//!   reductions, the Liouville transform for wave equations with variable
//!   propagation speed).
//! - [`spectral`]: eigenvalue tracking along paths, the hyperbolic
//!   subprincipal symbol and its envelope exponents.
//! - [`diagonalize`]: the diagonalisation hierarchy and numerical symbol
//!   class certification.
//! - [`asymptotic`]: large-time symbols, Fuchs residuals, `mu`, dichotomy
//!   tests, the Hartman-Wintner step and Levinson modes.
//! - [`propagate`]: adaptive fundamental-solution solver, Peano-Baker
//!   series, WKB factors, the zone product representation and decay fits.
//! - [`surfaces`]: averaged slowness surfaces and contact indices.

pub mod asymptotic;
pub mod coeff;
pub mod diagonalize;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod models;
pub mod ode;
pub mod propagate;
pub mod quad;
pub mod spectral;
pub mod surfaces;
pub mod zones;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C};
