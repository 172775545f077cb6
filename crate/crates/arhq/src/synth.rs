//! Synthetic layers with a controlled weight spectrum and a controlled
//! conditioning of the activation-residual covariance.

use arhq_core::linalg::sym_eigendecompose;
use arhq_core::quantizers::{Granularity, QuantizerSpec};
use arhq_core::residual::{compute_residual, gram_accumulator};
use arhq_core::{Error, Matrix, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub n_calib: usize,
    pub n_eval: usize,
    /// `σ_i(W) = weight_spectrum^i`.
    pub weight_spectrum: f64,
    /// Target `λ_max / λ_min` of the residual covariance.
    pub residual_anisotropy: f64,
    pub seed: u64,
    /// Quantizer whose residuals the anisotropy is measured against.
    pub probe_quantizer: QuantizerSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            d_in: 64,
            d_out: 64,
            n_calib: 512,
            n_eval: 256,
            weight_spectrum: 0.95,
            residual_anisotropy: 100.0,
            seed: 0,
            probe_quantizer: QuantizerSpec::uniform(4, Granularity::PerChannel),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_in", self.d_in),
            ("d_out", self.d_out),
            ("n_calib", self.n_calib),
            ("n_eval", self.n_eval),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if !(self.weight_spectrum.is_finite() && self.weight_spectrum > 0.0) {
            return Err(Error::param("weight_spectrum", "must be positive and finite"));
        }
        if !(self.residual_anisotropy.is_finite() && self.residual_anisotropy >= 1.0) {
            return Err(Error::param("residual_anisotropy", "must be finite and at least 1"));
        }
        self.probe_quantizer.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SynthLayer {
    pub w: Matrix,
    pub x_calib: Matrix,
    pub x_eval: Matrix,
    /// Ratio between the largest and smallest channel scale.
    pub ladder_span: f64,
    /// Measured conditioning of the residual covariance on `x_calib`.
    pub condition: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `k` orthonormal columns of length `n` (two Gram-Schmidt passes).
fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let g = gaussian(rng, k, n);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut v = g.row(i).to_vec();
        for _ in 0..2 {
            for u in &q {
                let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, a)| *x -= d * a);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    Matrix::from_fn(n, k, |i, j| q[j][i])
}

fn ladder(z: &Matrix, span: f64) -> Matrix {
    let d = z.cols();
    let step = if d > 1 { span.ln() / (d - 1) as f64 } else { 0.0 };
    Matrix::from_fn(z.rows(), d, |i, j| z[(i, j)] * (step * j as f64).exp())
}

/// `λ_max / λ_min` of the residual covariance of `x` under `q`; infinite
/// when singular.
pub fn residual_condition(x: &Matrix, q: &QuantizerSpec) -> Result<f64> {
    let e = compute_residual(x, q)?;
    let cov = gram_accumulator(&e)?.covariance()?;
    let ev = sym_eigendecompose(&cov)?.eigenvalues;
    let (hi, lo) = (ev[0], ev[ev.len() - 1]);
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

const MAX_CALIBRATION_STEPS: usize = 40;

/// Deterministic in `spec`. The ladder span is tuned until the measured
/// conditioning lands within a factor of two of the target, or fails.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthLayer> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.d_in.min(spec.d_out);
    let u = orthonormal_columns(&mut rng, spec.d_out, k);
    let v = orthonormal_columns(&mut rng, spec.d_in, k);
    let us = Matrix::from_fn(spec.d_out, k, |i, j| u[(i, j)] * spec.weight_spectrum.powi(j as i32));
    let w = us.matmul_t(&v)?;
    let z_calib = gaussian(&mut rng, spec.n_calib, spec.d_in);
    let z_eval = gaussian(&mut rng, spec.n_eval, spec.d_in);

    let target = spec.residual_anisotropy;
    let mut span = target.sqrt();
    let mut best = (f64::INFINITY, span, f64::INFINITY);
    for _ in 0..MAX_CALIBRATION_STEPS {
        let cond = residual_condition(&ladder(&z_calib, span), &spec.probe_quantizer)?;
        let miss = (cond / target).ln().abs();
        if miss < best.0 {
            best = (miss, span, cond);
        }
        if !cond.is_finite() || miss < 0.05 {
            break;
        }
        let next = (span * (target / cond).sqrt()).max(1.0);
        if next == span {
            break;
        }
        span = next;
    }
    let (_, span, cond) = best;
    if !(cond >= target / 2.0 && cond <= target * 2.0) {
        return Err(Error::param(
            "residual_anisotropy",
            format!(
                "target {target} unreachable with d_in = {} and n_calib = {}: closest measured \
                 conditioning {cond:.4}",
                spec.d_in, spec.n_calib
            ),
        ));
    }
    Ok(SynthLayer {
        w,
        x_calib: ladder(&z_calib, span),
        x_eval: ladder(&z_eval, span),
        ladder_span: span,
        condition: cond,
    })
}
