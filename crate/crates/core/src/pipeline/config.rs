use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::decompose::SplitMethod;
use crate::quantizers::QuantizerSpec;
use crate::residual::FloorRule;
use crate::smoothing::{compute_scales, SmoothingScales};
use crate::{Error, Matrix, Result};

/// Whether a split runs on the raw layer or after the smoothing transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    Raw,
    Smooth,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Smooth => "smooth",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "raw" => Ok(Variant::Raw),
            "smooth" => Ok(Variant::Smooth),
            other => Err(Error::param("variant", format!("unknown variant `{other}`"))),
        }
    }
}

/// How smoothing scales are obtained.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SmoothingSpec {
    #[cfg_attr(feature = "serde", serde(default = "default_alpha"))]
    pub alpha: f64,
    /// Explicit per-channel scales; overrides `alpha` when present.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub scales: Option<Vec<f64>>,
}

fn default_alpha() -> f64 {
    0.5
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            scales: None,
        }
    }
}

impl SmoothingSpec {
    pub fn scales_for(&self, x_calib: &Matrix, w: &Matrix) -> Result<SmoothingScales> {
        match &self.scales {
            Some(s) => {
                let scales = SmoothingScales::from_vec(s.clone())?;
                if scales.len() != w.cols() {
                    return Err(Error::DimensionMismatch {
                        context: "explicit smoothing scales",
                        left: (1, scales.len()),
                        right: w.shape(),
                    });
                }
                Ok(scales)
            }
            None => compute_scales(x_calib, w, self.alpha),
        }
    }
}

/// Everything one layer run needs. Mirrors the JSON config document.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LayerConfig {
    pub rank: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub floor: FloorRule,
    pub act_quantizer: QuantizerSpec,
    #[cfg_attr(feature = "serde", serde(default = "default_weight_quantizer"))]
    pub weight_quantizer: QuantizerSpec,
    /// Smoothing for single-split runs; `compare` uses it (or its default)
    /// for the `smooth` variant.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub smoothing: Option<SmoothingSpec>,
    #[cfg_attr(feature = "serde", serde(default = "default_methods"))]
    pub methods: Vec<SplitMethod>,
    #[cfg_attr(feature = "serde", serde(default = "default_variants"))]
    pub variants: Vec<Variant>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    /// Measure SNR on the calibration rows instead of held-out rows.
    #[cfg_attr(feature = "serde", serde(default))]
    pub eval_in_sample: bool,
}

pub fn default_weight_quantizer() -> QuantizerSpec {
    QuantizerSpec::block_fp4(16)
}

fn default_methods() -> Vec<SplitMethod> {
    SplitMethod::ALL.to_vec()
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Raw, Variant::Smooth]
}

impl LayerConfig {
    /// Defaults for everything but the rank and the activation quantizer.
    pub fn new(rank: usize, act_quantizer: QuantizerSpec) -> Self {
        Self {
            rank,
            floor: FloorRule::default(),
            act_quantizer,
            weight_quantizer: default_weight_quantizer(),
            smoothing: None,
            methods: default_methods(),
            variants: default_variants(),
            seed: 0,
            eval_in_sample: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::param("rank", "must be at least 1"));
        }
        self.floor.validate()?;
        self.act_quantizer.validate()?;
        self.weight_quantizer.validate()?;
        if let Some(s) = &self.smoothing {
            if !(0.0..=1.0).contains(&s.alpha) {
                return Err(Error::param("smoothing.alpha", format!("must lie in [0, 1], got {}", s.alpha)));
            }
            if let Some(v) = &s.scales {
                SmoothingScales::from_vec(v.clone())?;
            }
        }
        if self.methods.is_empty() {
            return Err(Error::param("methods", "at least one split method is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::param("variants", "at least one variant is required"));
        }
        if has_duplicates(&self.methods) {
            return Err(Error::param("methods", "duplicate entries"));
        }
        if has_duplicates(&self.variants) {
            return Err(Error::param("variants", "duplicate entries"));
        }
        Ok(())
    }

    /// Defaults written out, so a snapshot of this config is self-describing.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.act_quantizer = out.act_quantizer.resolved();
        out.weight_quantizer = out.weight_quantizer.resolved();
        out
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].iter().any(|b| a == b))
}
