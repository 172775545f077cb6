use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::config::{LayerConfig, Variant};
use crate::decompose::{FactorRange, SplitMethod};

/// A report row is either the no-split quantized baseline or a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RowMethod {
    Baseline,
    Split(SplitMethod),
}

impl RowMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RowMethod::Baseline => "baseline",
            RowMethod::Split(m) => m.as_str(),
        }
    }
}

impl fmt::Display for RowMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for RowMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for RowMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s: alloc::borrow::Cow<'de, str> = serde::Deserialize::deserialize(d)?;
        if s == "baseline" {
            return Ok(RowMethod::Baseline);
        }
        s.parse::<SplitMethod>()
            .map(RowMethod::Split)
            .map_err(serde::de::Error::custom)
    }
}

/// One (method, variant) measurement on one layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MethodRow {
    pub method: RowMethod,
    pub variant: Variant,
    /// `+inf` when the simulated output is exact.
    #[cfg_attr(feature = "serde", serde(with = "db"))]
    pub snr_db: f64,
    /// `snr_db` minus the same-variant baseline's `snr_db`.
    #[cfg_attr(feature = "serde", serde(with = "db"))]
    pub gain_db: f64,
    /// The method's own objective: residual-weighted for `arhq`, unweighted
    /// for `svd_plain`, activation-weighted for `activation_weighted`,
    /// clipping error for `outlier_absorb`. Baseline rows carry the
    /// residual-weighted objective of the unsplit weight.
    pub objective: f64,
    /// `‖(W_s − L) G^{1/2}‖_F²` under the residual metric, for every row.
    pub residual_objective: f64,
    pub params_added: usize,
    pub overhead_ratio: f64,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub factor_range: Option<FactorRange>,
}

/// All rows measured on one layer at one rank.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerReport {
    pub layer: String,
    pub d_out: usize,
    pub d_in: usize,
    pub rank: usize,
    pub seed: u64,
    pub rows: Vec<MethodRow>,
    pub config: LayerConfig,
}

impl LayerReport {
    pub fn row(&self, method: RowMethod, variant: Variant) -> Option<&MethodRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.variant == variant)
    }
}

/// Cross-layer mean of one (method, variant) group.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregateRow {
    pub method: RowMethod,
    pub variant: Variant,
    /// Mean over layers with finite SNR; `+inf` when every layer was exact.
    #[cfg_attr(feature = "serde", serde(with = "db"))]
    pub snr_db: f64,
    #[cfg_attr(feature = "serde", serde(with = "db"))]
    pub gain_db: f64,
    pub objective: f64,
    pub params_added: f64,
    pub layers: usize,
    /// Layers left out of the dB means because their SNR was infinite.
    pub excluded_infinite: usize,
}

/// Groups rows by (method, variant) in first-seen order and averages them.
///
/// dB means use finite entries only. Objective and parameter means use every
/// layer.
pub fn aggregate(reports: &[LayerReport]) -> Vec<AggregateRow> {
    let mut keys: Vec<(RowMethod, Variant)> = Vec::new();
    for r in reports.iter().flat_map(|r| &r.rows) {
        if !keys.contains(&(r.method, r.variant)) {
            keys.push((r.method, r.variant));
        }
    }
    keys.into_iter()
        .map(|(method, variant)| {
            let rows: Vec<&MethodRow> = reports
                .iter()
                .flat_map(|r| &r.rows)
                .filter(|r| r.method == method && r.variant == variant)
                .collect();
            let n = rows.len();
            let finite: Vec<&&MethodRow> = rows.iter().filter(|r| r.snr_db.is_finite()).collect();
            let excluded_infinite = n - finite.len();
            let (snr_db, gain_db) = if finite.is_empty() {
                let gain = rows.iter().map(|r| r.gain_db).sum::<f64>() / n as f64;
                (f64::INFINITY, gain)
            } else {
                let k = finite.len() as f64;
                (
                    finite.iter().map(|r| r.snr_db).sum::<f64>() / k,
                    finite.iter().map(|r| r.gain_db).sum::<f64>() / k,
                )
            };
            AggregateRow {
                method,
                variant,
                snr_db,
                gain_db,
                objective: rows.iter().map(|r| r.objective).sum::<f64>() / n as f64,
                params_added: rows.iter().map(|r| r.params_added as f64).sum::<f64>() / n as f64,
                layers: n,
                excluded_infinite,
            }
        })
        .collect()
}

/// Formats a dB value; infinities print as `inf` / `-inf`.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        String::from("inf")
    } else if v == f64::NEG_INFINITY {
        String::from("-inf")
    } else {
        alloc::format!("{v:.4}")
    }
}

/// Serde adapter for dB values: finite numbers stay numbers, infinities
/// become the strings `"inf"` / `"-inf"`.
#[cfg(feature = "serde")]
pub mod db {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct DbVisitor;
        impl Visitor<'_> for DbVisitor {
            type Value = f64;
            fn expecting(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    _ => Err(E::custom("expected \"inf\", \"-inf\" or \"nan\"")),
                }
            }
        }
        d.deserialize_any(DbVisitor)
    }
}
