//! Exact p-adic series arithmetic with certified Grassmannian reductions.
//!
//! The crate builds, from the hyperelliptic curve y^2 = x^(2g+1) + x, the
//! function spaces attached to line-bundle classes as subspaces of Laurent
//! series, acts on them by Dwork loops, and certifies theta-divisor membership
//! verdicts at an explicit working precision. Everything is exact: residues
//! mod p^k plus rational-integer coefficients, never floats.
//!
//! The narrative guide lives in `book/`; its code snippets compile and run as
//! doctests here (see [`book`]).

pub mod val;

pub mod tower;

pub mod laurent;

pub mod curve;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-unit: {0}")]
    NonUnit(String),
    #[error("unknown at working precision: {0}")]
    UnknownPrecision(String),
    #[error("window exhausted: {0}")]
    Window(String),
    #[error("exponential does not converge: {0}")]
    Convergence(String),
    #[error("serialization: {0}")]
    Serde(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
