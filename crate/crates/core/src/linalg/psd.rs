use alloc::vec::Vec;

use super::{sym_eigendecompose, EigenDecomposition, Matrix};
use crate::{Error, Result};

/// Exponent applied to the floored spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdExponent {
    /// The floored matrix itself.
    One,
    Sqrt,
    InvSqrt,
}

impl PsdExponent {
    fn apply(self, lambda: f64) -> f64 {
        match self {
            PsdExponent::One => lambda,
            PsdExponent::Sqrt => libm::sqrt(lambda),
            PsdExponent::InvSqrt => 1.0 / libm::sqrt(lambda),
        }
    }
}

/// `U diag(max(λ_i, floor)^p) Uᵀ` for a symmetric `s`.
pub fn psd_power(s: &Matrix, exponent: PsdExponent, floor: f64) -> Result<Matrix> {
    check_floor(floor)?;
    let eig = sym_eigendecompose(s)?;
    Ok(eig.reconstruct_with(|l| exponent.apply(l.max(floor))))
}

/// The floored matrix and both of its square-root powers, sharing one
/// eigendecomposition.
#[derive(Debug, Clone)]
pub struct FlooredPowers {
    pub floored: Matrix,
    pub sqrt: Matrix,
    pub inv_sqrt: Matrix,
    /// Spectrum of the input before flooring, descending.
    pub raw_eigenvalues: Vec<f64>,
}

pub fn floored_powers(s: &Matrix, floor: f64) -> Result<FlooredPowers> {
    check_floor(floor)?;
    let eig: EigenDecomposition = sym_eigendecompose(s)?;
    Ok(FlooredPowers {
        floored: eig.reconstruct_with(|l| l.max(floor)),
        sqrt: eig.reconstruct_with(|l| PsdExponent::Sqrt.apply(l.max(floor))),
        inv_sqrt: eig.reconstruct_with(|l| PsdExponent::InvSqrt.apply(l.max(floor))),
        raw_eigenvalues: eig.eigenvalues,
    })
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::param(
            "floor",
            alloc::format!("eigenvalue floor must be positive and finite, got {floor}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_inv_sqrt_is_identity() {
        let r = psd_power(&Matrix::identity(3), PsdExponent::InvSqrt, 1e-8).unwrap();
        assert!(r.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn floor_lifts_small_eigenvalue() {
        let s = Matrix::from_diag(&[4.0, 1e-12]).unwrap();
        let r = psd_power(&s, PsdExponent::Sqrt, 1e-6).unwrap();
        let expected = Matrix::from_diag(&[2.0, 1e-3]).unwrap();
        assert!(r.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn non_positive_floor_rejected() {
        let s = Matrix::identity(2);
        for bad in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                psd_power(&s, PsdExponent::Sqrt, bad),
                Err(Error::InvalidParameter { name: "floor", .. })
            ));
        }
    }

    #[test]
    fn negative_eigenvalues_are_floored() {
        let s = Matrix::from_diag(&[-3.0, 9.0]).unwrap();
        let p = floored_powers(&s, 0.25).unwrap();
        assert!(p.sqrt.sub(&Matrix::from_diag(&[0.5, 3.0]).unwrap()).unwrap().max_abs() < 1e-15);
        assert_eq!(p.raw_eigenvalues, alloc::vec![9.0, -3.0]);
    }
}
