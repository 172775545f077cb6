//! Diagonal equivalent transform `X_s = X S⁻¹`, `W_s = W S`, which leaves
//! `X_s W_sᵀ = X Wᵀ` unchanged while moving quantization difficulty between
//! activations and weights.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Matrix, Result};

pub const MIN_SCALE: f64 = 1e-5;
pub const MAX_SCALE: f64 = 1e5;

/// Per-input-channel scales `s`, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingScales {
    s: Vec<f64>,
    /// Migration strength the scales were derived with; `None` when the
    /// scales were supplied directly.
    pub alpha: Option<f64>,
}

impl SmoothingScales {
    pub fn from_vec(s: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = s
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidScale { index, value });
        }
        Ok(Self { s, alpha: None })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Scales `1/s`, undoing this transform.
    pub fn inverse(&self) -> SmoothingScales {
        SmoothingScales {
            s: self.s.iter().map(|v| 1.0 / v).collect(),
            alpha: None,
        }
    }
}

/// `s_j = max_i|X_ij|^α / max_k|W_kj|^(1−α)`, clamped to
/// `[MIN_SCALE, MAX_SCALE]`; channels where either maximum is zero get 1.
pub fn compute_scales(x_calib: &Matrix, w: &Matrix, alpha: f64) -> Result<SmoothingScales> {
    if x_calib.cols() != w.cols() {
        return Err(Error::DimensionMismatch {
            context: "compute_scales",
            left: x_calib.shape(),
            right: w.shape(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    let d = w.cols();
    let col_absmax = |m: &Matrix| -> Vec<f64> {
        let mut out = alloc::vec![0.0f64; d];
        for i in 0..m.rows() {
            for (o, v) in out.iter_mut().zip(m.row(i)) {
                *o = o.max(v.abs());
            }
        }
        out
    };
    let xmax = col_absmax(x_calib);
    let wmax = col_absmax(w);
    let s = xmax
        .iter()
        .zip(&wmax)
        .map(|(&xm, &wm)| {
            if xm == 0.0 || wm == 0.0 {
                1.0
            } else {
                (libm::pow(xm, alpha) / libm::pow(wm, 1.0 - alpha)).clamp(MIN_SCALE, MAX_SCALE)
            }
        })
        .collect();
    Ok(SmoothingScales {
        s,
        alpha: Some(alpha),
    })
}

/// `X S⁻¹`.
pub fn smooth_activations(x: &Matrix, scales: &SmoothingScales) -> Result<Matrix> {
    check_len(x, scales)?;
    let s = scales.as_slice();
    Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] / s[j]))
}

/// `W S`.
pub fn smooth_weight(w: &Matrix, scales: &SmoothingScales) -> Result<Matrix> {
    check_len(w, scales)?;
    let s = scales.as_slice();
    Ok(Matrix::from_fn(w.rows(), w.cols(), |i, j| w[(i, j)] * s[j]))
}

/// `(X S⁻¹, W S)`.
pub fn apply_smoothing(
    x: &Matrix,
    w: &Matrix,
    scales: &SmoothingScales,
) -> Result<(Matrix, Matrix)> {
    Ok((smooth_activations(x, scales)?, smooth_weight(w, scales)?))
}

fn check_len(m: &Matrix, scales: &SmoothingScales) -> Result<()> {
    if m.cols() != scales.len() {
        return Err(Error::DimensionMismatch {
            context: "smoothing",
            left: m.shape(),
            right: (1, scales.len()),
        });
    }
    Ok(())
}
