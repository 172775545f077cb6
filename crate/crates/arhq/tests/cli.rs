use std::path::Path;
use std::process::{Command, Output};

use arhq::tensor::{archive_entry, load_archive, load_tensor};

const SYNTH: [&str; 8] = ["--d-in", "24", "--d-out", "20", "--n-calib", "256", "--n-eval", "64"];

fn arhq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arhq"))
        .args(args)
        .env("ARHQ_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = arhq(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) {
    let mut args = vec!["gen-synth", "--out", p(dir), "--seed", seed, "--anisotropy", "50"];
    args.extend(SYNTH);
    ok(&args);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn split_writes_factors_that_recombine() {
    let t = tempfile::tempdir().unwrap();
    let layer = t.path().join("layer");
    gen(&layer, "1");
    let out = t.path().join("split");
    ok(&[
        "split",
        "--weight",
        p(&layer.join("w.arhqt")),
        "--calib",
        p(&layer.join("x_calib.arhqt")),
        "--rank",
        "4",
        "--out",
        p(&out),
    ]);
    for f in ["split.arhqa", "metric.arhqa", "split.json", "config.resolved.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("scales.arhqt").exists());
    let entries = load_archive(out.join("split.arhqa")).unwrap();
    let names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["w_res", "a", "b"]);
    let at = |n| archive_entry(&entries, n, Path::new("split")).unwrap();
    let w = load_tensor(layer.join("w.arhqt")).unwrap();
    let rebuilt = at("w_res").add(&at("b").matmul_t(at("a")).unwrap()).unwrap();
    assert!(rebuilt.sub(&w).unwrap().max_abs() <= 1e-8);
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("split.json")).unwrap()).unwrap();
    assert_eq!(sidecar["params_added"], 4 * (24 + 20));
    assert_eq!(sidecar["config"]["rank"], 4);

    let eval = t.path().join("eval");
    ok(&[
        "evaluate",
        "--split",
        p(&out),
        "--weight",
        p(&layer.join("w.arhqt")),
        "--eval",
        p(&layer.join("x_eval.arhqt")),
        "--out",
        p(&eval),
    ]);
    let e: serde_json::Value = serde_json::from_slice(&std::fs::read(eval.join("evaluate.json")).unwrap()).unwrap();
    assert!(e["gain_db"].as_f64().unwrap() > 0.0);
}

#[test]
fn smoothed_split_recombines_to_scaled_weight() {
    let t = tempfile::tempdir().unwrap();
    let layer = t.path().join("layer");
    gen(&layer, "2");
    let out = t.path().join("split");
    ok(&[
        "split",
        "--weight",
        p(&layer.join("w.arhqt")),
        "--calib",
        p(&layer.join("x_calib.arhqt")),
        "--alpha",
        "0.5",
        "--method",
        "svd",
        "--out",
        p(&out),
    ]);
    let s = load_tensor(out.join("scales.arhqt")).unwrap().column(0);
    let w = load_tensor(layer.join("w.arhqt")).unwrap();
    let ws = arhq_core::Matrix::from_fn(w.rows(), w.cols(), |i, j| w[(i, j)] * s[j]);
    let entries = load_archive(out.join("split.arhqa")).unwrap();
    let at = |n| archive_entry(&entries, n, Path::new("split")).unwrap();
    let rebuilt = at("w_res").add(&at("b").matmul_t(at("a")).unwrap()).unwrap();
    assert!(rebuilt.sub(&ws).unwrap().max_abs() <= 1e-8 * ws.max_abs());
}

#[test]
fn missing_input_exits_one_and_names_path() {
    let t = tempfile::tempdir().unwrap();
    let layer = t.path().join("layer");
    gen(&layer, "3");
    let missing = t.path().join("no_such_calib.arhqt");
    let out = arhq(&[
        "split",
        "--weight",
        p(&layer.join("w.arhqt")),
        "--calib",
        p(&missing),
        "--out",
        p(&t.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn usage_errors_exit_two() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("o");
    let cfg = t.path().join("bad.json");
    std::fs::write(&cfg, r#"{"rank": 4, "act_quantizer": {"family": "block_fp4"}, "typo": 1}"#).unwrap();
    for args in [
        vec!["sweep-rank", "--synth", "--ranks", "0", "--out", p(&o)],
        vec!["sweep-rank", "--synth", "--ranks", "4,2", "--out", p(&o)],
        vec!["compare", "--synth", "--rank", "0", "--out", p(&o)],
        vec!["compare", "--synth", "--methods", "nope", "--out", p(&o)],
        vec!["compare", "--synth", "--config", p(&cfg), "--out", p(&o)],
        vec!["compare", "--out", p(&o)],
        vec!["frobnicate"],
    ] {
        let out = arhq(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(arhq(&["--help"]).status.success());
}

#[test]
fn compare_rows_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let mut base = vec!["compare", "--synth", "--synth-layers", "2", "--seed", "4"];
    base.extend(SYNTH);
    let run = |name: &str, extra: &[&str]| {
        let dir = t.path().join(name);
        let mut args = base.clone();
        args.extend(["--out", p(&dir)]);
        args.extend(extra);
        ok(&args);
        dir
    };
    let a = run("a", &[]);
    let rows = csv_rows(&a.join("report.csv"));
    let synth0: Vec<_> = rows.iter().filter(|r| r[0] == "synth0" && r[2] == "raw").collect();
    assert!(synth0.iter().filter(|r| r[1] != "baseline").count() >= 4);
    assert!(rows.iter().any(|r| r[0] == "average"));
    assert!(a.join("config.resolved.json").exists());

    let b = run("b", &[]);
    for f in ["report.csv", "report.json", "config.resolved.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let narrow = run("narrow", &["--methods", "arhq,svd", "--variants", "raw"]);
    let rows = csv_rows(&narrow.join("report.csv"));
    let methods: Vec<&str> = rows.iter().filter(|r| r[0] == "synth1").map(|r| r[1].as_str()).collect();
    assert_eq!(methods, ["baseline", "arhq", "svd_plain"]);
}

#[test]
fn layer_directories_feed_compare() {
    let t = tempfile::tempdir().unwrap();
    let (l0, l1) = (t.path().join("q_proj"), t.path().join("k_proj"));
    gen(&l0, "5");
    gen(&l1, "6");
    let out = t.path().join("cmp");
    ok(&["compare", "--layer", p(&l0), "--layer", p(&l1), "--rank", "3", "--out", p(&out)]);
    let rows = csv_rows(&out.join("report.csv"));
    assert!(rows.iter().any(|r| r[0] == "q_proj"));
    assert!(rows.iter().any(|r| r[0] == "k_proj"));
    let arhq = rows.iter().find(|r| r[0] == "q_proj" && r[1] == "arhq").unwrap();
    assert_eq!(arhq[6], (3 * (24 + 20)).to_string());
}

#[test]
fn sweep_rank_outputs() {
    let t = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep-rank", "--synth", "--ranks", "1,2,4,8", "--seed", "7"];
    args.extend(SYNTH);
    let out = t.path().join("sw");
    args.extend(["--out", p(&out)]);
    ok(&args);
    let mut prev = f64::INFINITY;
    for k in [1, 2, 4, 8] {
        let rows = csv_rows(&out.join(format!("rank_{k}/report.csv")));
        let obj: f64 = rows.iter().find(|r| r[0] == "synth0" && r[1] == "arhq" && r[2] == "raw").unwrap()[5]
            .parse()
            .unwrap();
        assert!(obj <= prev, "rank {k}: {obj} > {prev}");
        prev = obj;
    }
    let spectrum = csv_rows(&out.join("spectrum.csv"));
    assert_eq!(spectrum.len(), 2 * 20);
    assert!(out.join("config.resolved.json").exists());

    // One rank matches `compare` at that rank.
    let single = t.path().join("single");
    let mut args = vec!["sweep-rank", "--synth", "--ranks", "4", "--seed", "7"];
    args.extend(SYNTH);
    args.extend(["--out", p(&single)]);
    ok(&args);
    let cmp = t.path().join("cmp");
    let mut args = vec!["compare", "--synth", "--rank", "4", "--seed", "7"];
    args.extend(SYNTH);
    args.extend(["--out", p(&cmp)]);
    ok(&args);
    assert_eq!(
        std::fs::read(single.join("rank_4/report.csv")).unwrap(),
        std::fs::read(cmp.join("report.csv")).unwrap()
    );
}

#[test]
fn resolved_config_is_a_valid_config() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("a");
    let mut args = vec!["compare", "--synth", "--floor-absolute", "1e-5", "--alpha", "0.6"];
    args.extend(SYNTH);
    args.extend(["--out", p(&out)]);
    ok(&args);
    let cfg = arhq::config::load_config(out.join("config.resolved.json")).unwrap();
    assert_eq!(cfg.floor, arhq_core::residual::FloorRule::Absolute(1e-5));
    assert_eq!(cfg.smoothing.unwrap().alpha, 0.6);

    let again = t.path().join("b");
    let resolved = out.join("config.resolved.json");
    let mut args = vec!["compare", "--synth", "--config", p(&resolved)];
    args.extend(SYNTH);
    args.extend(["--out", p(&again)]);
    ok(&args);
    assert_eq!(
        std::fs::read(out.join("report.csv")).unwrap(),
        std::fs::read(again.join("report.csv")).unwrap()
    );
}
