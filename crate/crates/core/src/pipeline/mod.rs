//! Per-layer driver: smoothing, residual covariance, eigenvalue floor,
//! scaled truncated SVD and factorization, followed by a simulated
//! dual-branch forward pass scored with SNR.

mod config;
mod report;

use alloc::string::String;
use alloc::vec::Vec;

pub use config::{default_weight_quantizer, LayerConfig, SmoothingSpec, Variant};
#[cfg(feature = "serde")]
pub use report::db;
pub use report::{aggregate, format_db, AggregateRow, LayerReport, MethodRow, RowMethod};

use crate::decompose::{
    activation_weighted_split, arhq_split, clipping_objective, outlier_absorb_split,
    scaled_spectrum, svd_split, weighted_objective, LowRankSplit, SplitMethod,
};
use crate::quantizers::quantize;
use crate::residual::{compute_residual, gram_accumulator, ResidualMetric};
use crate::smoothing::{smooth_activations, smooth_weight, SmoothingScales};
use crate::{Error, Matrix, Result};

/// What a single-layer run hands back: the split lives in the smoothed
/// space when `scales` is set.
#[derive(Debug, Clone)]
pub struct LayerArtifacts {
    /// The original, unsmoothed weight.
    pub weight: Matrix,
    pub split: LowRankSplit,
    pub metric: ResidualMetric,
    pub scales: Option<SmoothingScales>,
    pub config: LayerConfig,
}

impl LayerArtifacts {
    /// `W S` (or `W` when unsmoothed).
    pub fn smoothed_weight(&self) -> Matrix {
        match &self.scales {
            Some(s) => smooth_weight(&self.weight, s).expect("scales match weight"),
            None => self.weight.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// `X Wᵀ`.
    Reference,
    /// `Q_x(X_s) Q_w(W_s)ᵀ`, no split.
    BaselineQuant,
    /// `Q_x(X_s) Q_w(W_res)ᵀ + (X_s A) Bᵀ`.
    DualBranch,
}

/// `10 log10(‖Y‖² / ‖Y − Ŷ‖²)`; `+inf` when `Ŷ = Y` exactly.
pub fn snr(y_ref: &Matrix, y_hat: &Matrix) -> Result<f64> {
    if y_ref.shape() != y_hat.shape() {
        return Err(y_ref.mismatch("snr", y_hat));
    }
    let signal = y_ref.frobenius_sq();
    if signal == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let noise = y_ref.sub(y_hat)?.frobenius_sq();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(signal / noise))
}

fn gain(snr_db: f64, baseline_db: f64) -> f64 {
    if snr_db == baseline_db {
        0.0
    } else {
        snr_db - baseline_db
    }
}

fn check_layer(w: &Matrix, x: &Matrix, what: &'static str) -> Result<()> {
    if x.cols() != w.cols() {
        return Err(Error::DimensionMismatch {
            context: what,
            left: x.shape(),
            right: w.shape(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::EmptyCalibration);
    }
    Ok(())
}

fn residual_metric(x_s: &Matrix, cfg: &LayerConfig) -> Result<ResidualMetric> {
    let e = compute_residual(x_s, &cfg.act_quantizer)?;
    gram_accumulator(&e)?.finalize_with(cfg.floor)
}

fn activation_metric(x_s: &Matrix, cfg: &LayerConfig) -> Result<ResidualMetric> {
    gram_accumulator(x_s)?.finalize_with(cfg.floor)
}

/// Splits one layer with `method`, smoothing first when `scales` is set.
pub fn run_layer(
    w: &Matrix,
    x_calib: &Matrix,
    cfg: &LayerConfig,
    method: SplitMethod,
    scales: Option<SmoothingScales>,
) -> Result<LayerArtifacts> {
    cfg.validate()?;
    check_layer(w, x_calib, "calibration activations")?;
    let (x_s, w_s) = match &scales {
        Some(s) => (smooth_activations(x_calib, s)?, smooth_weight(w, s)?),
        None => (x_calib.clone(), w.clone()),
    };
    let metric = residual_metric(&x_s, cfg)?;
    let split = split_with(method, &w_s, &x_s, &metric, cfg, cfg.rank)?;
    Ok(LayerArtifacts {
        weight: w.clone(),
        split,
        metric,
        scales,
        config: cfg.resolved(),
    })
}

/// The residual-weighted split of one layer, smoothed first when
/// `cfg.smoothing` is set.
pub fn run_arhq_layer(w: &Matrix, x_calib: &Matrix, cfg: &LayerConfig) -> Result<LayerArtifacts> {
    let scales = match &cfg.smoothing {
        Some(spec) => Some(spec.scales_for(x_calib, w)?),
        None => None,
    };
    run_layer(w, x_calib, cfg, SplitMethod::Arhq, scales)
}

fn split_with(
    method: SplitMethod,
    w_s: &Matrix,
    x_s: &Matrix,
    metric: &ResidualMetric,
    cfg: &LayerConfig,
    rank: usize,
) -> Result<LowRankSplit> {
    match method {
        SplitMethod::Arhq => arhq_split(w_s, metric, rank),
        SplitMethod::SvdPlain => svd_split(w_s, rank),
        SplitMethod::ActivationWeighted => {
            activation_weighted_split(w_s, &activation_metric(x_s, cfg)?, rank)
        }
        SplitMethod::OutlierAbsorb => {
            outlier_absorb_split(w_s, rank, &cfg.weight_quantizer).map(|o| o.split)
        }
    }
}

/// Simulated layer output on `x_eval`.
pub fn simulate_forward(
    x_eval: &Matrix,
    artifacts: &LayerArtifacts,
    cfg: &LayerConfig,
    mode: ForwardMode,
) -> Result<Matrix> {
    if x_eval.cols() != artifacts.weight.cols() {
        return Err(x_eval.mismatch("simulate_forward", &artifacts.weight));
    }
    if mode == ForwardMode::Reference {
        return x_eval.matmul_t(&artifacts.weight);
    }
    let x_s = match &artifacts.scales {
        Some(s) => smooth_activations(x_eval, s)?,
        None => x_eval.clone(),
    };
    let q_x = quantize(&x_s, &cfg.act_quantizer)?;
    match mode {
        ForwardMode::BaselineQuant => {
            let q_w = quantize(&artifacts.smoothed_weight(), &cfg.weight_quantizer)?;
            q_x.matmul_t(&q_w)
        }
        _ => dual_branch(&q_x, &x_s, &artifacts.split, cfg),
    }
}

fn dual_branch(q_x: &Matrix, x_s: &Matrix, split: &LowRankSplit, cfg: &LayerConfig) -> Result<Matrix> {
    let q_w = quantize(&split.w_res, &cfg.weight_quantizer)?;
    let main = q_x.matmul_t(&q_w)?;
    let side = x_s.matmul(&split.a)?.matmul_t(&split.b)?;
    main.add(&side)
}

/// `σ_i(W_s G^{1/2})` for one variant.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Spectrum {
    pub variant: Variant,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RankSweep {
    /// One report per rank, in the order given.
    pub reports: Vec<LayerReport>,
    /// One spectrum per configured variant.
    pub spectra: Vec<Spectrum>,
}

/// Per-variant state shared by every method and rank.
struct Prepared {
    variant: Variant,
    w_s: Matrix,
    x_calib_s: Matrix,
    x_eval_s: Matrix,
    q_eval: Matrix,
    metric: ResidualMetric,
    h_metric: Option<ResidualMetric>,
    baseline_snr: f64,
    baseline_objective: f64,
}

fn prepare(
    variant: Variant,
    w: &Matrix,
    x_calib: &Matrix,
    x_eval: &Matrix,
    y_ref: &Matrix,
    cfg: &LayerConfig,
) -> Result<Prepared> {
    let scales = match variant {
        Variant::Raw => None,
        Variant::Smooth => Some(cfg.smoothing.clone().unwrap_or_default().scales_for(x_calib, w)?),
    };
    let (w_s, x_calib_s, x_eval_s) = match &scales {
        Some(s) => (
            smooth_weight(w, s)?,
            smooth_activations(x_calib, s)?,
            smooth_activations(x_eval, s)?,
        ),
        None => (w.clone(), x_calib.clone(), x_eval.clone()),
    };
    let metric = residual_metric(&x_calib_s, cfg)?;
    let h_metric = if cfg.methods.contains(&SplitMethod::ActivationWeighted) {
        Some(activation_metric(&x_calib_s, cfg)?)
    } else {
        None
    };
    let q_eval = quantize(&x_eval_s, &cfg.act_quantizer)?;
    let y_base = q_eval.matmul_t(&quantize(&w_s, &cfg.weight_quantizer)?)?;
    let baseline_snr = snr(y_ref, &y_base)?;
    let baseline_objective = w_s.matmul(&metric.g_sqrt)?.frobenius_sq();
    Ok(Prepared {
        variant,
        w_s,
        x_calib_s,
        x_eval_s,
        q_eval,
        metric,
        h_metric,
        baseline_snr,
        baseline_objective,
    })
}

fn method_row(
    p: &Prepared,
    method: SplitMethod,
    rank: usize,
    y_ref: &Matrix,
    cfg: &LayerConfig,
) -> Result<MethodRow> {
    let split = match method {
        SplitMethod::ActivationWeighted => activation_weighted_split(
            &p.w_s,
            p.h_metric.as_ref().expect("prepared for activation_weighted"),
            rank,
        )?,
        _ => split_with(method, &p.w_s, &p.x_calib_s, &p.metric, cfg, rank)?,
    };
    let residual_objective = weighted_objective(&p.w_s, &split, &p.metric.g_sqrt)?;
    let objective = match method {
        SplitMethod::Arhq => residual_objective,
        SplitMethod::SvdPlain => p.w_s.sub(&split.low_rank())?.frobenius_sq(),
        SplitMethod::ActivationWeighted => weighted_objective(
            &p.w_s,
            &split,
            &p.h_metric.as_ref().expect("prepared for activation_weighted").g_sqrt,
        )?,
        SplitMethod::OutlierAbsorb => clipping_objective(&split.w_res, &cfg.weight_quantizer)?,
    };
    let y_hat = dual_branch(&p.q_eval, &p.x_eval_s, &split, cfg)?;
    let snr_db = snr(y_ref, &y_hat)?;
    Ok(MethodRow {
        method: RowMethod::Split(method),
        variant: p.variant,
        snr_db,
        gain_db: gain(snr_db, p.baseline_snr),
        objective,
        residual_objective,
        params_added: split.params_added(),
        overhead_ratio: split.overhead_ratio(),
        factor_range: Some(split.factor_range()),
    })
}

fn baseline_row(p: &Prepared) -> MethodRow {
    MethodRow {
        method: RowMethod::Baseline,
        variant: p.variant,
        snr_db: p.baseline_snr,
        gain_db: 0.0,
        objective: p.baseline_objective,
        residual_objective: p.baseline_objective,
        params_added: 0,
        overhead_ratio: 0.0,
        factor_range: None,
    }
}

/// Runs every configured (variant, method) pair at each rank in `ranks`
/// (ascending) and reports SNR against the exact output.
pub fn sweep_rank(
    layer: &str,
    w: &Matrix,
    x_calib: &Matrix,
    x_eval: &Matrix,
    cfg: &LayerConfig,
    ranks: &[usize],
) -> Result<RankSweep> {
    cfg.validate()?;
    check_layer(w, x_calib, "calibration activations")?;
    check_layer(w, x_eval, "evaluation activations")?;
    let max_rank = w.rows().min(w.cols());
    if ranks.is_empty() {
        return Err(Error::param("ranks", "empty rank list"));
    }
    if ranks.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::param("ranks", "ranks must be strictly ascending"));
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0 || r > max_rank) {
        return Err(Error::param(
            "rank",
            alloc::format!("rank {bad} outside 1..={max_rank}"),
        ));
    }

    let x_eval = if cfg.eval_in_sample { x_calib } else { x_eval };
    let y_ref = x_eval.matmul_t(w)?;
    let prepared = cfg
        .variants
        .iter()
        .map(|&v| prepare(v, w, x_calib, x_eval, &y_ref, cfg))
        .collect::<Result<Vec<_>>>()?;

    let snapshot = cfg.resolved();
    let mut reports = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let mut rows = Vec::new();
        for p in &prepared {
            rows.push(baseline_row(p));
            for &m in &cfg.methods {
                rows.push(method_row(p, m, rank, &y_ref, cfg)?);
            }
        }
        let mut config = snapshot.clone();
        config.rank = rank;
        reports.push(LayerReport {
            layer: String::from(layer),
            d_out: w.rows(),
            d_in: w.cols(),
            rank,
            seed: cfg.seed,
            rows,
            config,
        });
    }
    let spectra = prepared
        .iter()
        .map(|p| {
            Ok(Spectrum {
                variant: p.variant,
                sigma: scaled_spectrum(&p.w_s, &p.metric)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankSweep { reports, spectra })
}

/// Baseline plus every configured method and variant at `cfg.rank`.
pub fn compare_methods(
    layer: &str,
    w: &Matrix,
    x_calib: &Matrix,
    x_eval: &Matrix,
    cfg: &LayerConfig,
) -> Result<LayerReport> {
    let mut sweep = sweep_rank(layer, w, x_calib, x_eval, cfg, &[cfg.rank])?;
    Ok(sweep.reports.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizers::{Granularity, QuantizerSpec};

    fn layer() -> (Matrix, Matrix, Matrix) {
        let w = Matrix::from_fn(6, 5, |i, j| ((i * 5 + j) as f64 * 0.731).sin());
        let x = Matrix::from_fn(40, 5, |i, j| ((i * 3 + j * 7) as f64 * 0.377).cos() * (j + 1) as f64);
        let xe = Matrix::from_fn(12, 5, |i, j| ((i * 11 + j) as f64 * 0.19).sin() * (j + 1) as f64);
        (w, x, xe)
    }

    #[test]
    fn snr_edge_cases() {
        let y = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(snr(&y, &y).unwrap(), f64::INFINITY);
        assert_eq!(snr(&y, &Matrix::zeros(2, 2)).unwrap(), 0.0);
        // ‖Y − Ŷ‖² = 0.1 ‖Y‖² → 10 dB.
        let y_hat = y.scale(1.0 - 0.1f64.sqrt());
        assert!((snr(&y, &y_hat).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(
            snr(&Matrix::zeros(2, 2), &y),
            Err(Error::UndefinedSnr)
        ));
        assert!(snr(&y, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn identity_quantizers_collapse_to_reference() {
        let (w, x, xe) = layer();
        let mut cfg = LayerConfig::new(2, QuantizerSpec::identity());
        cfg.weight_quantizer = QuantizerSpec::identity();
        let report = compare_methods("l0", &w, &x, &xe, &cfg).unwrap();
        assert_eq!(report.rows.len(), 10);
        for row in &report.rows {
            // W_res + BAᵀ = W only up to round-off; exact zero error is the
            // baseline's privilege.
            assert!(row.snr_db > 250.0, "{row:?}");
        }
        let base = report.row(RowMethod::Baseline, Variant::Raw).unwrap();
        assert_eq!(base.snr_db, f64::INFINITY);
        assert_eq!(base.gain_db, 0.0);
    }

    #[test]
    fn rows_are_ordered_and_gains_consistent() {
        let (w, x, xe) = layer();
        let cfg = LayerConfig::new(2, QuantizerSpec::uniform(4, Granularity::PerRow));
        let report = compare_methods("l0", &w, &x, &xe, &cfg).unwrap();
        let order: Vec<_> = report.rows.iter().map(|r| (r.method, r.variant)).collect();
        let mut expected = Vec::new();
        for v in [Variant::Raw, Variant::Smooth] {
            expected.push((RowMethod::Baseline, v));
            for m in SplitMethod::ALL {
                expected.push((RowMethod::Split(m), v));
            }
        }
        assert_eq!(order, expected);
        for row in &report.rows {
            let base = report.row(RowMethod::Baseline, row.variant).unwrap();
            assert_eq!(row.gain_db, row.snr_db - base.snr_db);
        }
    }

    #[test]
    fn sweep_rejects_bad_rank_lists() {
        let (w, x, xe) = layer();
        let cfg = LayerConfig::new(1, QuantizerSpec::uniform(4, Granularity::PerRow));
        assert!(sweep_rank("l", &w, &x, &xe, &cfg, &[]).is_err());
        assert!(sweep_rank("l", &w, &x, &xe, &cfg, &[2, 1]).is_err());
        assert!(sweep_rank("l", &w, &x, &xe, &cfg, &[0]).is_err());
        assert!(sweep_rank("l", &w, &x, &xe, &cfg, &[6]).is_err());
    }

    #[test]
    fn empty_calibration_is_an_error() {
        let (w, _, xe) = layer();
        let cfg = LayerConfig::new(1, QuantizerSpec::uniform(4, Granularity::PerRow));
        assert!(matches!(
            run_arhq_layer(&w, &Matrix::zeros(0, 5), &cfg),
            Err(Error::EmptyCalibration)
        ));
        assert!(compare_methods("l", &w, &xe, &Matrix::zeros(0, 5), &cfg).is_err());
    }
}
