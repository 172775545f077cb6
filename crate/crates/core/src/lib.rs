//! Activation-residual weighted low-rank splitting for low-bit linear layers.
//!
//! A linear layer `Y = X Wᵀ` run with quantized activations leaks the
//! activation residual `E_x = Q_x(X) - X` into the output as `E_x Wᵀ`. This
//! crate measures that residual on calibration data, turns it into the
//! covariance metric `G = E_xᵀ E_x / N`, and splits the weight as
//! `W = W_res + B Aᵀ` so that the high-precision rank-`r` branch `B Aᵀ`
//! absorbs the directions of `W` that amplify the residual the most.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the synthetic
//! layer generator and the command line live in the companion `arhq` crate.
//!
//! Module map:
//!
//! * [`linalg`]: dense matrix, symmetric eigendecomposition, truncated SVD,
//!   floored PSD powers.
//! * [`quantizers`]: fake quantizers (uniform symmetric, FP4 block).
//! * [`residual`]: residuals, streaming covariance, the floored metric.
//! * [`decompose`]: the closed-form residual-weighted split and baselines.
//! * [`smoothing`]: diagonal equivalent transform.
//! * [`pipeline`]: per-layer driver, dual-branch simulation, SNR, reports.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod decompose;
mod error;
pub mod linalg;
pub mod pipeline;
pub mod quantizers;
pub mod residual;
pub mod smoothing;

pub use error::{Error, Result};
pub use linalg::Matrix;
