//! Numerical laboratory for the elliptic Baxter–Belavin R-matrix and the
//! anisotropic spin Macdonald–Ruijsenaars operators built from it.
//!
//! The crate is layered bottom-up:
//!
//! * [`elliptic`]: theta function, Kronecker function φ, Eisenstein functions.
//! * [`tensor`]: dense complex matrices and two-site operators on `(C^M)^{⊗N}`.
//! * [`rmatrix`]: the R-matrix, its normalized and classical versions, property checks.
//! * [`identities`]: ordered subset products, the quadratic identities and their residues.
//! * [`operators`]: difference operators, composition and commutators.
//! * [`limits`]: the second order differential limit of the first operator.
//!
//! Every check returns a [`Residual`], an absolute discrepancy together with
//! the magnitude of the largest summand that entered it.

pub mod elliptic;
pub mod error;
pub mod identities;
pub mod limits;
pub mod operators;
pub mod rmatrix;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use sampling::Residual;

/// Shorthand used throughout the crate.
pub type C64 = Complex64;
