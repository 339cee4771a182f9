use num_complex::Complex64;
use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid moduli: {0}")]
    InvalidModuli(String),
    #[error("argument {arg} of {context} lies within the pole guard")]
    PoleProximity { context: &'static str, arg: Complex64 },
    #[error("normalizer phi(hbar, x) vanishes at x = {0}")]
    NormalizerZero(Complex64),
    #[error("bad leg pair ({i}, {j}) for {n} legs")]
    BadLeg { i: usize, j: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("index subsets overlap")]
    OverlappingSubsets,
    #[error("sampling exhausted after {attempts} rejected draws")]
    SamplingExhausted { attempts: usize },
    #[error("operation requires {0}")]
    BadOrder(String),
    #[error("extrapolation unstable: estimates differ by {0:e} (relative)")]
    ExtrapolationUnstable(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
