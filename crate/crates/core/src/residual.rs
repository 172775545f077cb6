//! Activation residuals and the residual covariance metric
//! `G = (1/N) E_xᵀ E_x`, floored and square-rooted for the weighted split.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{floored_powers, Matrix};
use crate::quantizers::{quantize, QuantizerSpec};
use crate::{Error, Result};

/// Absolute lower bound on a relative floor.
pub const MIN_FLOOR: f64 = 1e-10;

/// `E = Q(x) - x`.
pub fn compute_residual(x: &Matrix, spec: &QuantizerSpec) -> Result<Matrix> {
    quantize(x, spec)?.sub(x)
}

/// How the eigenvalue floor `ε` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", deny_unknown_fields))]
pub enum FloorRule {
    Absolute(f64),
    /// `ε = max(rel * mean(λ), MIN_FLOOR)`.
    Relative(f64),
}

impl Default for FloorRule {
    fn default() -> Self {
        FloorRule::Relative(1e-6)
    }
}

impl FloorRule {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            FloorRule::Absolute(v) | FloorRule::Relative(v) => v,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::param("floor", format!("must be positive and finite, got {v}")));
        }
        Ok(())
    }

    /// Absolute floor for a covariance (mean eigenvalue = trace / d).
    pub fn resolve(&self, covariance: &Matrix) -> f64 {
        match *self {
            FloorRule::Absolute(v) => v,
            FloorRule::Relative(rel) => {
                let d = covariance.rows().max(1) as f64;
                (rel * covariance.trace() / d).max(MIN_FLOOR)
            }
        }
    }
}

/// Streaming sufficient statistics for `EᵀE`.
///
/// Accumulators over disjoint batches can be merged; the sum is associative
/// up to round-off.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    gram: Matrix,
    n_rows: usize,
}

impl CovarianceAccumulator {
    pub fn new(d_in: usize) -> Self {
        Self {
            gram: Matrix::zeros(d_in, d_in),
            n_rows: 0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.gram.rows()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Running `Σ E_bᵀ E_b`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn accumulate(&mut self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.d_in() {
            return Err(Error::DimensionMismatch {
                context: "accumulate",
                left: self.gram.shape(),
                right: batch.shape(),
            });
        }
        // Upper triangle then mirror, so the gram stays exactly symmetric.
        let d = self.d_in();
        for r in 0..batch.rows() {
            let e = batch.row(r);
            for i in 0..d {
                let ei = e[i];
                if ei == 0.0 {
                    continue;
                }
                for j in i..d {
                    self.gram[(i, j)] += ei * e[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                self.gram[(i, j)] = self.gram[(j, i)];
            }
        }
        self.n_rows += batch.rows();
        Ok(())
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) -> Result<()> {
        self.gram.add_assign(&other.gram)?;
        self.n_rows += other.n_rows;
        Ok(())
    }

    /// `gram / n_rows`.
    pub fn covariance(&self) -> Result<Matrix> {
        if self.n_rows == 0 {
            return Err(Error::EmptyCalibration);
        }
        Ok(self.gram.scale(1.0 / self.n_rows as f64))
    }

    pub fn finalize(&self, floor: f64) -> Result<ResidualMetric> {
        ResidualMetric::from_covariance(&self.covariance()?, floor, self.n_rows)
    }

    pub fn finalize_with(&self, rule: FloorRule) -> Result<ResidualMetric> {
        rule.validate()?;
        let cov = self.covariance()?;
        let floor = rule.resolve(&cov);
        ResidualMetric::from_covariance(&cov, floor, self.n_rows)
    }
}

/// Covariance of the rows of `x`, accumulated in one shot. With residual
/// rows this is `G`; with raw activations it is the activation second
/// moment `H = XᵀX / N`.
pub fn gram_accumulator(x: &Matrix) -> Result<CovarianceAccumulator> {
    let mut acc = CovarianceAccumulator::new(x.cols());
    acc.accumulate(x)?;
    Ok(acc)
}

/// The floored metric `G_ε = U diag(max(λ, ε)) Uᵀ` with its square root and
/// inverse square root.
#[derive(Debug, Clone)]
pub struct ResidualMetric {
    pub g: Matrix,
    pub g_sqrt: Matrix,
    pub g_invsqrt: Matrix,
    pub floor: f64,
    pub n_rows: usize,
    /// Spectrum of the un-floored covariance, descending.
    pub raw_eigenvalues: Vec<f64>,
}

impl ResidualMetric {
    pub fn from_covariance(cov: &Matrix, floor: f64, n_rows: usize) -> Result<Self> {
        let p = floored_powers(cov, floor)?;
        Ok(Self {
            g: p.floored,
            g_sqrt: p.sqrt,
            g_invsqrt: p.inv_sqrt,
            floor,
            n_rows,
            raw_eigenvalues: p.raw_eigenvalues,
        })
    }

    /// `c·I`, the metric under which the weighted split reduces to a plain
    /// truncated SVD.
    pub fn isotropic(d: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::param("c", format!("must be positive and finite, got {c}")));
        }
        let root = libm::sqrt(c);
        let eye = Matrix::identity(d);
        Ok(Self {
            g: eye.scale(c),
            g_sqrt: eye.scale(root),
            g_invsqrt: eye.scale(1.0 / root),
            floor: c,
            n_rows: 0,
            raw_eigenvalues: alloc::vec![c; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.g.rows()
    }

    /// `λ_max / λ_min` of the floored metric.
    pub fn condition_number(&self) -> f64 {
        let hi = self.raw_eigenvalues.first().copied().unwrap_or(0.0).max(self.floor);
        let lo = self.raw_eigenvalues.last().copied().unwrap_or(0.0).max(self.floor);
        hi / lo
    }
}

/// `L(W_res) = (1/N)‖E W_resᵀ‖_F² = Tr(W_res G W_resᵀ)`.
pub fn residual_loss(w_res: &Matrix, g: &Matrix) -> Result<f64> {
    let wg = w_res.matmul(g)?;
    Ok(wg
        .as_slice()
        .iter()
        .zip(w_res.as_slice())
        .map(|(a, b)| a * b)
        .sum())
}

/// `∇L = 2 W_res G`.
pub fn residual_loss_gradient(w_res: &Matrix, g: &Matrix) -> Result<Matrix> {
    Ok(w_res.matmul(g)?.scale(2.0))
}

/// Hessian `2 I ⊗ G` applied to a direction `Δ`: `2 Δ G`.
pub fn residual_loss_hessian_apply(direction: &Matrix, g: &Matrix) -> Result<Matrix> {
    residual_loss_gradient(direction, g)
}
