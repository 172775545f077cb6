//! Low-rank weight splits `W = W_res + B Aᵀ`.
//!
//! The residual-weighted split solves
//! `min_{rank L ≤ r} ‖(W − L) G^{1/2}‖_F²` in closed form: with
//! `M = W G^{1/2} ≈ U_r Σ_r V_rᵀ`, the optimum is `L = M_r G^{-1/2}`,
//! deployed as `B = U_r Σ_r` (up-projection) and `A = G^{-1/2} V_r`
//! (down-projection). The baselines reuse the same machinery with a
//! different metric (identity, activation second moment) or report a
//! different objective (clipping error of the quantized main branch).

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::linalg::{svd, truncated_svd, Matrix};
use crate::quantizers::{quantize, QuantizerSpec};
use crate::residual::ResidualMetric;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitMethod {
    /// Residual-covariance weighted split.
    Arhq,
    /// Unweighted truncated SVD of `W`.
    SvdPlain,
    /// Split weighted by the activation second moment `H = XᵀX / N`.
    ActivationWeighted,
    /// Truncated SVD of `W`, scored by the clipping error of `W − L`.
    OutlierAbsorb,
}

impl SplitMethod {
    pub const ALL: [SplitMethod; 4] = [
        SplitMethod::Arhq,
        SplitMethod::SvdPlain,
        SplitMethod::ActivationWeighted,
        SplitMethod::OutlierAbsorb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitMethod::Arhq => "arhq",
            SplitMethod::SvdPlain => "svd_plain",
            SplitMethod::ActivationWeighted => "activation_weighted",
            SplitMethod::OutlierAbsorb => "outlier_absorb",
        }
    }
}

impl fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "arhq" => Ok(SplitMethod::Arhq),
            "svd" | "svd_plain" => Ok(SplitMethod::SvdPlain),
            "activation" | "activation_weighted" | "asvd" => Ok(SplitMethod::ActivationWeighted),
            "outlier" | "outlier_absorb" | "svdquant" => Ok(SplitMethod::OutlierAbsorb),
            other => Err(Error::param("method", format!("unknown split method `{other}`"))),
        }
    }
}

/// `W = w_res + b·aᵀ` with `a: D_in × r`, `b: D_out × r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSplit {
    pub w_res: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub rank: usize,
    pub method: SplitMethod,
}

/// Largest absolute entry of each part of a split.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FactorRange {
    pub a: f64,
    pub b: f64,
    pub w_res: f64,
}

/// Storage precision for exported factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FactorPrecision {
    #[default]
    F64,
    F32,
    Bf16,
}

impl FactorPrecision {
    pub fn round(self, v: f64) -> f64 {
        match self {
            FactorPrecision::F64 => v,
            FactorPrecision::F32 => v as f32 as f64,
            FactorPrecision::Bf16 => {
                // Round-to-nearest-even on the upper 16 bits of the f32.
                let bits = (v as f32).to_bits();
                let lsb = (bits >> 16) & 1;
                let rounded = bits.wrapping_add(0x7fff + lsb) & 0xffff_0000;
                f32::from_bits(rounded) as f64
            }
        }
    }
}

impl FromStr for FactorPrecision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(FactorPrecision::F64),
            "f32" => Ok(FactorPrecision::F32),
            "bf16" => Ok(FactorPrecision::Bf16),
            other => Err(Error::param("precision", format!("unknown factor precision `{other}`"))),
        }
    }
}

impl LowRankSplit {
    pub fn d_out(&self) -> usize {
        self.w_res.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_res.cols()
    }

    /// `L = B Aᵀ`.
    pub fn low_rank(&self) -> Matrix {
        self.b.matmul_t(&self.a).expect("factor shapes agree")
    }

    /// `W_res + B Aᵀ`.
    pub fn recombine(&self) -> Matrix {
        self.w_res.add(&self.low_rank()).expect("factor shapes agree")
    }

    /// Extra parameters of the side branch: `r (D_in + D_out)`.
    pub fn params_added(&self) -> usize {
        self.rank * (self.d_in() + self.d_out())
    }

    /// `params_added / (D_in D_out)`; equals `2r/D` for square layers.
    pub fn overhead_ratio(&self) -> f64 {
        self.params_added() as f64 / (self.d_in() * self.d_out()) as f64
    }

    pub fn factor_range(&self) -> FactorRange {
        FactorRange {
            a: self.a.max_abs(),
            b: self.b.max_abs(),
            w_res: self.w_res.max_abs(),
        }
    }

    /// Rounds both factors to `precision` and moves the rounding error into
    /// `w_res`, so `w_res + B Aᵀ` still reproduces the original weight.
    pub fn with_factor_precision(&self, precision: FactorPrecision) -> LowRankSplit {
        if precision == FactorPrecision::F64 {
            return self.clone();
        }
        let w = self.recombine();
        let a = self.a.map(|v| precision.round(v));
        let b = self.b.map(|v| precision.round(v));
        let l = b.matmul_t(&a).expect("factor shapes agree");
        LowRankSplit {
            w_res: w.sub(&l).expect("same shape"),
            a,
            b,
            rank: self.rank,
            method: self.method,
        }
    }
}

fn check_rank(w: &Matrix, r: usize) -> Result<()> {
    let k = w.rows().min(w.cols());
    if r == 0 || r > k {
        return Err(Error::param(
            "rank",
            format!("rank {r} outside 1..={k} for a {}x{} weight", w.rows(), w.cols()),
        ));
    }
    Ok(())
}

/// Closed-form minimizer of `‖(W − L) G^{1/2}‖_F²` over rank-`r` `L`,
/// tagged with `method`.
pub fn weighted_split(
    w: &Matrix,
    metric: &ResidualMetric,
    r: usize,
    method: SplitMethod,
) -> Result<LowRankSplit> {
    if w.cols() != metric.dim() {
        return Err(w.mismatch("weighted_split", &metric.g));
    }
    check_rank(w, r)?;
    let m = w.matmul(&metric.g_sqrt)?;
    let t = truncated_svd(&m, r)?;
    let b = t.u_sigma();
    let a = metric.g_invsqrt.matmul(&t.v)?;
    let w_res = w.sub(&b.matmul_t(&a)?)?;
    Ok(LowRankSplit {
        w_res,
        a,
        b,
        rank: r,
        method,
    })
}

/// Residual-covariance weighted split.
pub fn arhq_split(w: &Matrix, metric: &ResidualMetric, r: usize) -> Result<LowRankSplit> {
    weighted_split(w, metric, r, SplitMethod::Arhq)
}

/// Activation-weighted split: same closed form with `H = XᵀX / N` as the
/// metric.
pub fn activation_weighted_split(
    w: &Matrix,
    h_metric: &ResidualMetric,
    r: usize,
) -> Result<LowRankSplit> {
    weighted_split(w, h_metric, r, SplitMethod::ActivationWeighted)
}

/// Best rank-`r` Frobenius approximation of `w` (Eckart-Young).
pub fn svd_split(w: &Matrix, r: usize) -> Result<LowRankSplit> {
    plain_svd_split(w, r, SplitMethod::SvdPlain)
}

fn plain_svd_split(w: &Matrix, r: usize, method: SplitMethod) -> Result<LowRankSplit> {
    check_rank(w, r)?;
    let t = truncated_svd(w, r)?;
    let b = t.u_sigma();
    let a = t.v;
    let w_res = w.sub(&b.matmul_t(&a)?)?;
    Ok(LowRankSplit {
        w_res,
        a,
        b,
        rank: r,
        method,
    })
}

#[derive(Debug, Clone)]
pub struct OutlierAbsorbSplit {
    pub split: LowRankSplit,
    /// `‖(W − L) − Q_w(W − L)‖_F²`.
    pub clipping_objective: f64,
}

/// Outlier-absorption baseline: the magnitude-dominant rank-`r` part of `w`
/// moves to the side branch; the quantization error of what remains is
/// reported alongside.
pub fn outlier_absorb_split(
    w: &Matrix,
    r: usize,
    w_spec: &QuantizerSpec,
) -> Result<OutlierAbsorbSplit> {
    let split = plain_svd_split(w, r, SplitMethod::OutlierAbsorb)?;
    let clipping_objective = clipping_objective(&split.w_res, w_spec)?;
    Ok(OutlierAbsorbSplit {
        split,
        clipping_objective,
    })
}

/// `‖w_res − Q_w(w_res)‖_F²`.
pub fn clipping_objective(w_res: &Matrix, w_spec: &QuantizerSpec) -> Result<f64> {
    Ok(quantize(w_res, w_spec)?.sub(w_res)?.frobenius_sq())
}

/// `‖(w − B Aᵀ) G^{1/2}‖_F²`.
pub fn weighted_objective(w: &Matrix, split: &LowRankSplit, g_sqrt: &Matrix) -> Result<f64> {
    if w.shape() != split.w_res.shape() {
        return Err(w.mismatch("weighted_objective", &split.w_res));
    }
    let diff = w.sub(&split.low_rank())?;
    Ok(diff.matmul(g_sqrt)?.frobenius_sq())
}

/// Singular values of `W G^{1/2}`, descending; the per-rank gains of the
/// weighted split are their squares.
pub fn scaled_spectrum(w: &Matrix, metric: &ResidualMetric) -> Result<Vec<f64>> {
    if w.cols() != metric.dim() {
        return Err(w.mismatch("scaled_spectrum", &metric.g));
    }
    Ok(svd(&w.matmul(&metric.g_sqrt)?)?.sigma)
}
