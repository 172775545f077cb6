mod common;

use arhq_core::smoothing::{apply_smoothing, compute_scales, SmoothingScales};
use arhq_core::Matrix;
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn half_alpha_is_square_root_ratio() {
    let mut r = rng(1);
    let x = gaussian(&mut r, 32, 4);
    let w = gaussian(&mut r, 6, 4);
    let s = compute_scales(&x, &w, 0.5).unwrap();
    for j in 0..4 {
        let xm = x.column(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let wm = w.column(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((s.as_slice()[j] - (xm / wm).sqrt()).abs() <= 1e-14 * s.as_slice()[j]);
    }
}

#[test]
fn output_preserved_under_extreme_scales() {
    let mut r = rng(2);
    for _ in 0..20 {
        let d = r.random_range(2..12);
        let x = gaussian(&mut r, 16, d);
        let w = gaussian(&mut r, 5, d);
        let s: Vec<f64> = (0..d).map(|_| 10f64.powf(r.random_range(-4.0..4.0))).collect();
        let scales = SmoothingScales::from_vec(s).unwrap();
        let (xs, ws) = apply_smoothing(&x, &w, &scales).unwrap();
        let y = x.matmul_t(&w).unwrap();
        assert!(rel_frob(&xs.matmul_t(&ws).unwrap(), &y) < 1e-10);
    }
}

proptest! {
    #[test]
    fn inverse_scales_restore_inputs(
        s in prop::collection::vec(1e-3f64..1e3, 5),
        v in prop::collection::vec(-10.0f64..10.0, 20),
    ) {
        let x = Matrix::new(4, 5, v.clone()).unwrap();
        let w = Matrix::new(4, 5, v.iter().rev().copied().collect()).unwrap();
        let scales = SmoothingScales::from_vec(s).unwrap();
        let (xs, ws) = apply_smoothing(&x, &w, &scales).unwrap();
        let (xb, wb) = apply_smoothing(&xs, &ws, &scales.inverse()).unwrap();
        prop_assert!(xb.sub(&x).unwrap().max_abs() <= 1e-12 * x.max_abs().max(1e-300));
        prop_assert!(wb.sub(&w).unwrap().max_abs() <= 1e-12 * w.max_abs().max(1e-300));
    }

    #[test]
    fn computed_scales_positive(
        v in prop::collection::vec(-1e4f64..1e4, 24),
        alpha in 0.0f64..=1.0,
    ) {
        let x = Matrix::new(4, 6, v.clone()).unwrap();
        let w = Matrix::new(4, 6, v.iter().map(|a| a * 1e-3).collect()).unwrap();
        let s = compute_scales(&x, &w, alpha).unwrap();
        prop_assert!(s.as_slice().iter().all(|&v| v > 0.0 && v.is_finite()));
    }
}
