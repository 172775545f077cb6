//! Fake quantizers: quantize to a low-bit grid and immediately dequantize,
//! so the returned matrix carries exactly the rounding error a low-bit
//! kernel would see.
//!
//! Scales are absmax-derived and kept in full precision. The value emitted
//! for the top code is the group's range itself (not `qmax * step`), which
//! makes every quantizer bitwise idempotent.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Matrix, Result};

/// Magnitudes representable by an E2M1 (FP4) element.
pub const FP4_GRID: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
const FP4_MAX: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum QuantFamily {
    Identity,
    UniformSymmetric,
    BlockFp4,
}

/// Which entries share one absmax scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Granularity {
    PerTensor,
    /// One scale per row: per token for activations, per output channel for
    /// weights.
    PerRow,
    /// One scale per column (input channel).
    PerChannel,
    /// Contiguous `block_size` runs within each row; the last run of a row
    /// may be shorter.
    PerBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScaleRule {
    #[default]
    Absmax,
}

/// Declarative description of a fake quantizer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct QuantizerSpec {
    pub family: QuantFamily,
    /// Bit width; only read by `uniform_symmetric`.
    #[cfg_attr(feature = "serde", serde(default = "default_bits"))]
    pub bits: u8,
    /// `None` picks the family default: `per_row` for uniform, `per_block`
    /// for FP4.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub granularity: Option<Granularity>,
    #[cfg_attr(feature = "serde", serde(default = "default_block_size"))]
    pub block_size: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub scale_rule: ScaleRule,
    /// Absolute cap on a group's range: `range = min(absmax, clip)`.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub clip: Option<f64>,
}

#[cfg(feature = "serde")]
fn default_bits() -> u8 {
    4
}

#[cfg(feature = "serde")]
fn default_block_size() -> usize {
    16
}

impl QuantizerSpec {
    pub fn identity() -> Self {
        Self {
            family: QuantFamily::Identity,
            bits: 4,
            granularity: None,
            block_size: 16,
            scale_rule: ScaleRule::Absmax,
            clip: None,
        }
    }

    pub fn uniform(bits: u8, granularity: Granularity) -> Self {
        Self {
            family: QuantFamily::UniformSymmetric,
            bits,
            granularity: Some(granularity),
            ..Self::identity()
        }
    }

    /// NVFP4-style: E2M1 elements, one full-precision scale per block.
    pub fn block_fp4(block_size: usize) -> Self {
        Self {
            family: QuantFamily::BlockFp4,
            granularity: Some(Granularity::PerBlock),
            block_size,
            ..Self::identity()
        }
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = Some(clip);
        self
    }

    pub fn effective_granularity(&self) -> Granularity {
        match (self.family, self.granularity) {
            (_, Some(g)) => g,
            (QuantFamily::BlockFp4, None) => Granularity::PerBlock,
            _ => Granularity::PerRow,
        }
    }

    /// The same spec with the family-default granularity written out.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if out.family != QuantFamily::Identity {
            out.granularity = Some(out.effective_granularity());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clip {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::param("clip", format!("must be positive and finite, got {c}")));
            }
        }
        match self.family {
            QuantFamily::Identity => return Ok(()),
            QuantFamily::UniformSymmetric => {
                if !(2..=8).contains(&self.bits) {
                    return Err(Error::param(
                        "bits",
                        format!("uniform_symmetric supports 2..=8 bits, got {}", self.bits),
                    ));
                }
            }
            QuantFamily::BlockFp4 => {
                if self.effective_granularity() != Granularity::PerBlock {
                    return Err(Error::param("granularity", "block_fp4 requires per_block"));
                }
            }
        }
        if self.effective_granularity() == Granularity::PerBlock && self.block_size < 2 {
            return Err(Error::param(
                "block_size",
                format!("must be at least 2, got {}", self.block_size),
            ));
        }
        Ok(())
    }

    /// Largest integer code of the uniform grid, `2^(bits-1) - 1`.
    pub fn uniform_qmax(&self) -> f64 {
        ((1u32 << (self.bits - 1)) - 1) as f64
    }

    /// Grid spacing of the uniform quantizer for a group with this range:
    /// `2 * range / (2^bits - 2)`.
    pub fn uniform_step(&self, range: f64) -> f64 {
        range / self.uniform_qmax()
    }
}

/// Applies the fake quantizer described by `spec` to `x`.
pub fn quantize(x: &Matrix, spec: &QuantizerSpec) -> Result<Matrix> {
    spec.validate()?;
    match spec.family {
        QuantFamily::Identity => Ok(x.clone()),
        QuantFamily::UniformSymmetric => {
            let qmax = spec.uniform_qmax();
            Ok(quantize_groups(x, spec, |vals, range| {
                snap_uniform(vals, range, qmax)
            }))
        }
        QuantFamily::BlockFp4 => quantize_block_fp4(x, spec),
    }
}

/// FP4 (E2M1) block quantization: each run of `block_size` entries in a row
/// is scaled by `absmax / 6` and snapped to the nearest signed magnitude in
/// [`FP4_GRID`], ties away from zero.
pub fn quantize_block_fp4(x: &Matrix, spec: &QuantizerSpec) -> Result<Matrix> {
    if spec.family != QuantFamily::BlockFp4 {
        return Err(Error::param("family", "quantize_block_fp4 needs family block_fp4"));
    }
    spec.validate()?;
    Ok(quantize_groups(x, spec, snap_fp4))
}

/// `min(absmax, clip)` over one scale group.
fn group_range(vals: &[f64], clip: Option<f64>) -> f64 {
    let absmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    match clip {
        Some(c) => absmax.min(c),
        None => absmax,
    }
}

fn quantize_groups(
    x: &Matrix,
    spec: &QuantizerSpec,
    snap: impl Fn(&mut [f64], f64),
) -> Matrix {
    let mut out = x.clone();
    let (rows, cols) = x.shape();
    let run = |vals: &mut [f64]| {
        let range = group_range(vals, spec.clip);
        if range == 0.0 {
            // All-zero group (scale taken as 1): passes through as zeros.
            vals.iter_mut().for_each(|v| *v = 0.0);
        } else {
            snap(vals, range);
        }
    };
    match spec.effective_granularity() {
        Granularity::PerTensor => run(out.as_mut_slice()),
        Granularity::PerRow => (0..rows).for_each(|i| run(out.row_mut(i))),
        Granularity::PerBlock => {
            let bs = spec.block_size;
            for i in 0..rows {
                out.row_mut(i).chunks_mut(bs).for_each(&run);
            }
        }
        Granularity::PerChannel => {
            let mut col: Vec<f64> = Vec::with_capacity(rows);
            for j in 0..cols {
                col.clear();
                col.extend((0..rows).map(|i| out[(i, j)]));
                run(&mut col);
                for (i, &v) in col.iter().enumerate() {
                    out[(i, j)] = v;
                }
            }
        }
    }
    out
}

/// Settles a rounded level index by the computed distances `|a − mag(k)|`
/// of it and its neighbours, so the result is nearest in floating point
/// too. Equal distances go to the larger magnitude.
fn settle(a: f64, guess: usize, top: usize, mag: impl Fn(usize) -> f64) -> f64 {
    let mut best = mag(guess);
    let mut best_d = libm::fabs(a - best);
    for k in [guess.saturating_sub(1), (guess + 1).min(top)] {
        let m = mag(k);
        let d = libm::fabs(a - m);
        if d < best_d || (d == best_d && m > best) {
            best = m;
            best_d = d;
        }
    }
    best
}

fn snap_uniform(vals: &mut [f64], range: f64, qmax: f64) {
    let step = range / qmax;
    let top = qmax as usize;
    let level = |k: usize| if k == top { range } else { k as f64 * step };
    for v in vals.iter_mut() {
        let k = libm::round(v.abs() / step).min(qmax) as usize;
        *v = signed(*v, settle(v.abs(), k, top, level));
    }
}

fn snap_fp4(vals: &mut [f64], range: f64) {
    let scale = range / FP4_MAX;
    let top = FP4_GRID.len() - 1;
    let level = |k: usize| if k == top { range } else { FP4_GRID[k] * scale };
    for v in vals.iter_mut() {
        let t = v.abs() / scale;
        // Midpoints between consecutive grid magnitudes; reaching a midpoint
        // rounds up, i.e. away from zero.
        let idx = FP4_GRID
            .windows(2)
            .take_while(|w| t >= 0.5 * (w[0] + w[1]))
            .count();
        *v = signed(*v, settle(v.abs(), idx, top, level));
    }
}

#[inline]
fn signed(orig: f64, mag: f64) -> f64 {
    if mag == 0.0 {
        0.0
    } else if orig < 0.0 {
        -mag
    } else {
        mag
    }
}
