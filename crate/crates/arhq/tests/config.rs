use std::path::Path;

use arhq::config::{parse_config, to_json};
use arhq::IoError;
use arhq_core::decompose::SplitMethod;
use arhq_core::pipeline::{compare_methods, LayerConfig, SmoothingSpec, Variant};
use arhq_core::quantizers::{Granularity, QuantFamily, QuantizerSpec};
use arhq_core::residual::FloorRule;
use arhq_core::Matrix;

fn parse(s: &str) -> Result<LayerConfig, IoError> {
    parse_config(s, Path::new("cfg.json"))
}

fn message(e: IoError) -> String {
    match e {
        IoError::Config { message, .. } => message,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn minimal_config_gets_defaults() {
    let cfg = parse(r#"{"rank": 128, "act_quantizer": {"family": "block_fp4"}}"#).unwrap();
    assert_eq!(cfg.rank, 128);
    assert_eq!(cfg.floor, FloorRule::Relative(1e-6));
    assert_eq!(cfg.act_quantizer.family, QuantFamily::BlockFp4);
    assert_eq!(cfg.act_quantizer.block_size, 16);
    assert_eq!(cfg.methods, SplitMethod::ALL.to_vec());
    assert_eq!(cfg.variants, vec![Variant::Raw, Variant::Smooth]);
    assert!(cfg.smoothing.is_none());

    let smoothed = parse(r#"{"rank": 4, "act_quantizer": {"family": "block_fp4"}, "smoothing": {}}"#).unwrap();
    assert_eq!(smoothed.smoothing.unwrap().alpha, 0.5);
}

#[test]
fn rank_zero_rejected() {
    let e = parse(r#"{"rank": 0, "act_quantizer": {"family": "block_fp4"}}"#).unwrap_err();
    assert!(message(e).contains("rank"));
}

#[test]
fn errors_name_the_offending_path() {
    let e = parse(r#"{"rank": 2, "act_quantizer": {"family": "block_fp4", "bitz": 4}}"#).unwrap_err();
    let m = message(e);
    assert!(m.starts_with("act_quantizer"), "{m}");
    assert!(m.contains("bitz"), "{m}");

    let e = parse(r#"{"rank": 2, "act_quantizer": {"family": "block_fp4"}, "floor": {"relative": "x"}}"#)
        .unwrap_err();
    assert!(message(e).starts_with("floor"));

    let e = parse(r#"{"rank": 2, "act_quantizer": {"family": "block_fp4"}, "extra": 1}"#).unwrap_err();
    assert!(message(e).contains("extra"));

    let e = parse(r#"{"act_quantizer": {"family": "block_fp4"}}"#).unwrap_err();
    assert!(message(e).contains("rank"));

    let e = parse(r#"{"rank": 2, "act_quantizer": {"family": "uniform_symmetric", "bits": 1}}"#).unwrap_err();
    assert!(message(e).contains("bits"));
}

#[test]
fn report_snapshot_reparses_identically() {
    let mut cfg = LayerConfig::new(2, QuantizerSpec::uniform(4, Granularity::PerChannel).with_clip(3.5));
    cfg.weight_quantizer = QuantizerSpec::block_fp4(8);
    cfg.floor = FloorRule::Absolute(1e-4);
    cfg.smoothing = Some(SmoothingSpec {
        alpha: 0.7,
        scales: None,
    });
    cfg.methods = vec![SplitMethod::SvdPlain, SplitMethod::Arhq];
    cfg.variants = vec![Variant::Smooth];
    cfg.seed = 99;
    let w = Matrix::from_fn(5, 4, |i, j| ((i * 4 + j) as f64).sin());
    let x = Matrix::from_fn(30, 4, |i, j| ((i + 3 * j) as f64 * 0.7).cos() * (1 + j) as f64);
    let rep = compare_methods("l", &w, &x, &x, &cfg).unwrap();
    let json = serde_json::to_string(&rep).unwrap();
    let back: arhq_core::pipeline::LayerReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);
    let reparsed = parse(&to_json(&rep.config)).unwrap();
    assert_eq!(reparsed, cfg.resolved());
    assert_eq!(reparsed, rep.config);
}
