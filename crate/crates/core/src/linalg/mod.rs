//! Dense kernels: the [`Matrix`] carrier, symmetric eigendecomposition,
//! truncated SVD and eigenvalue-floored PSD powers.
//!
//! Everything is `f64`. All routines are pure functions of their inputs.

mod eigen;
mod matrix;
mod psd;
mod svd;

pub use eigen::{sym_eigendecompose, EigenDecomposition};
pub use matrix::Matrix;
pub use psd::{floored_powers, psd_power, FlooredPowers, PsdExponent};
pub use svd::{svd, truncated_svd, TruncatedSvd};
