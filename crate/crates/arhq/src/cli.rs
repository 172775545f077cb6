//! The `arhq` command line. Exit status 0 on success, 1 on runtime or
//! data errors, 2 on usage or config errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arhq_core::decompose::{FactorPrecision, SplitMethod};
use arhq_core::pipeline::{
    compare_methods, run_layer, simulate_forward, snr, sweep_rank, ForwardMode, LayerArtifacts,
    LayerConfig, LayerReport, SmoothingSpec, Spectrum,
};
use arhq_core::quantizers::{Granularity, QuantizerSpec};
use arhq_core::residual::{FloorRule, ResidualMetric};
use arhq_core::smoothing::SmoothingScales;
use arhq_core::Matrix;
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{check, load_config, save_config};
use crate::error::IoError;
use crate::report::{write_report, write_spectra, ReportFormat};
use crate::synth::{gen_synthetic, SynthLayer, SynthSpec};
use crate::tensor::{archive_entry, load_archive, load_tensor, save_archive, save_tensor, Dtype};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Debug, Parser)]
#[command(name = "arhq", version, about = "Residual-weighted low-rank splits for low-bit layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split one layer and write the factors.
    Split(SplitArgs),
    /// Score a stored split on evaluation activations.
    Evaluate(EvaluateArgs),
    /// Baseline plus every configured method on one or more layers.
    Compare(CompareArgs),
    /// `compare` at several ranks, plus the scaled weight spectrum.
    SweepRank(SweepArgs),
    /// Write a synthetic layer.
    GenSynth(GenSynthArgs),
}

/// Overrides mirror config keys one to one.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON layer config; a built-in default is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Floor as a fraction of the mean eigenvalue.
    #[arg(long, conflicts_with = "floor_absolute")]
    pub floor_relative: Option<f64>,
    #[arg(long)]
    pub floor_absolute: Option<f64>,
    /// Enables smoothing with this migration strength.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated, e.g. `arhq,svd`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated subset of `raw,smooth`.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Score on the calibration rows instead of held-out rows.
    #[arg(long)]
    pub eval_in_sample: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthSpec::default().d_in)]
    pub d_in: usize,
    #[arg(long, default_value_t = SynthSpec::default().d_out)]
    pub d_out: usize,
    #[arg(long, default_value_t = SynthSpec::default().n_calib)]
    pub n_calib: usize,
    #[arg(long, default_value_t = SynthSpec::default().n_eval)]
    pub n_eval: usize,
    #[arg(long, default_value_t = SynthSpec::default().weight_spectrum)]
    pub weight_spectrum: f64,
    #[arg(long, default_value_t = SynthSpec::default().residual_anisotropy)]
    pub anisotropy: f64,
}

impl SynthArgs {
    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            d_in: self.d_in,
            d_out: self.d_out,
            n_calib: self.n_calib,
            n_eval: self.n_eval,
            weight_spectrum: self.weight_spectrum,
            residual_anisotropy: self.anisotropy,
            seed,
            ..SynthSpec::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
#[group(id = "source", required = true, multiple = false, args = ["layer", "synth"])]
pub struct LayerSource {
    /// Directory holding `w.arhqt`, `x_calib.arhqt` and `x_eval.arhqt`.
    #[arg(long)]
    pub layer: Vec<PathBuf>,
    /// Generate layers instead; layer `i` uses seed `seed + i`.
    #[arg(long)]
    pub synth: bool,
    #[arg(long, default_value_t = 1, requires = "synth")]
    pub synth_layers: usize,
    #[command(flatten)]
    pub synth_args: SynthArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub weight: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long, default_value = "arhq")]
    pub method: String,
    /// Storage precision of the factors; `w_res` absorbs the rounding.
    #[arg(long, default_value = "f64")]
    pub factor_precision: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory of a previous `split`.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub weight: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: LayerSource,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: LayerSource,
    /// Comma-separated, strictly ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ranks: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] IoError),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Run(e) if e.is_usage() => ExitCode::from(2),
            Failure::Run(_) => ExitCode::from(1),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

/// rank 16, 4-bit per-channel activations, 8-bit per-row weights.
pub fn builtin_config() -> LayerConfig {
    let mut cfg = LayerConfig::new(16, QuantizerSpec::uniform(4, Granularity::PerChannel));
    cfg.weight_quantizer = QuantizerSpec::uniform(8, Granularity::PerRow);
    cfg
}

impl Overrides {
    pub fn resolve(&self) -> Outcome<LayerConfig> {
        let (mut cfg, origin) = match &self.config {
            Some(p) => (load_config(p)?, p.clone()),
            None => (builtin_config(), PathBuf::from("<built-in config>")),
        };
        if let Some(r) = self.rank {
            cfg.rank = r;
        }
        if let Some(v) = self.floor_relative {
            cfg.floor = FloorRule::Relative(v);
        }
        if let Some(v) = self.floor_absolute {
            cfg.floor = FloorRule::Absolute(v);
        }
        if let Some(a) = self.alpha {
            cfg.smoothing.get_or_insert_with(SmoothingSpec::default).alpha = a;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(usage)?;
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(usage)?;
        }
        if self.eval_in_sample {
            cfg.eval_in_sample = true;
        }
        Ok(check(cfg, &origin)?)
    }
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Outcome {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    s.push('\n');
    fs::write(path, s).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

struct Layer {
    name: String,
    w: Matrix,
    x_calib: Matrix,
    x_eval: Matrix,
}

fn load_layers(src: &LayerSource, cfg: &LayerConfig) -> Outcome<Vec<Layer>> {
    if src.synth {
        if src.synth_layers == 0 {
            return Err(usage("--synth-layers must be at least 1"));
        }
        return (0..src.synth_layers)
            .into_par_iter()
            .map(|i| {
                let spec = src.synth_args.spec(cfg.seed.wrapping_add(i as u64));
                let SynthLayer { w, x_calib, x_eval, .. } =
                    gen_synthetic(&spec).map_err(|e| Failure::Run(e.into()))?;
                Ok(Layer {
                    name: format!("synth{i}"),
                    w,
                    x_calib,
                    x_eval,
                })
            })
            .collect();
    }
    src.layer
        .iter()
        .map(|dir| {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string());
            let w = load_tensor(dir.join("w.arhqt"))?;
            let x_calib = load_tensor(dir.join("x_calib.arhqt"))?;
            let x_eval = if cfg.eval_in_sample {
                x_calib.clone()
            } else {
                load_tensor(dir.join("x_eval.arhqt"))?
            };
            Ok(Layer {
                name,
                w,
                x_calib,
                x_eval,
            })
        })
        .collect()
}

fn core(e: arhq_core::Error) -> Failure {
    Failure::Run(IoError::Core(e))
}

fn cmd_compare(args: &CompareArgs) -> Outcome {
    let cfg = args.overrides.resolve()?;
    create_dir(&args.out)?;
    save_config(&cfg, args.out.join(RESOLVED_CONFIG))?;
    let layers = load_layers(&args.source, &cfg)?;
    let reports = layers
        .par_iter()
        .map(|l| compare_methods(&l.name, &l.w, &l.x_calib, &l.x_eval, &cfg).map_err(core))
        .collect::<Outcome<Vec<LayerReport>>>()?;
    write_report(&reports, args.out.join("report.csv"), ReportFormat::Csv)?;
    write_report(&reports, args.out.join("report.json"), ReportFormat::Json)?;
    info!("compared {} layer(s) into {}", reports.len(), args.out.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Outcome {
    let cfg = args.overrides.resolve()?;
    if args.ranks.contains(&0) {
        return Err(usage("rank 0 is not allowed"));
    }
    if args.ranks.windows(2).any(|p| p[0] >= p[1]) {
        return Err(usage("--ranks must be strictly ascending"));
    }
    create_dir(&args.out)?;
    save_config(&cfg, args.out.join(RESOLVED_CONFIG))?;
    let layers = load_layers(&args.source, &cfg)?;
    let sweeps = layers
        .par_iter()
        .map(|l| {
            sweep_rank(&l.name, &l.w, &l.x_calib, &l.x_eval, &cfg, &args.ranks)
                .map(|s| (l.name.clone(), s))
                .map_err(core)
        })
        .collect::<Outcome<Vec<_>>>()?;
    for (k, &rank) in args.ranks.iter().enumerate() {
        let dir = args.out.join(format!("rank_{rank}"));
        create_dir(&dir)?;
        let reports: Vec<LayerReport> = sweeps.iter().map(|(_, s)| s.reports[k].clone()).collect();
        write_report(&reports, dir.join("report.csv"), ReportFormat::Csv)?;
        write_report(&reports, dir.join("report.json"), ReportFormat::Json)?;
    }
    let spectra: Vec<(String, Vec<Spectrum>)> =
        sweeps.into_iter().map(|(n, s)| (n, s.spectra)).collect();
    write_spectra(&spectra, args.out.join("spectrum.csv"))?;
    Ok(())
}

#[derive(Serialize)]
struct SplitSidecar<'a> {
    method: SplitMethod,
    rank: usize,
    d_out: usize,
    d_in: usize,
    factor_precision: FactorPrecision,
    params_added: usize,
    overhead_ratio: f64,
    factor_range: arhq_core::decompose::FactorRange,
    floor: f64,
    condition_number: f64,
    smoothed: bool,
    config: &'a LayerConfig,
}

fn cmd_split(args: &SplitArgs) -> Outcome {
    let cfg = args.overrides.resolve()?;
    let method: SplitMethod = args.method.parse().map_err(usage)?;
    let precision: FactorPrecision = args.factor_precision.parse().map_err(usage)?;
    let w = load_tensor(&args.weight)?;
    let x = load_tensor(&args.calib)?;
    let scales = match &cfg.smoothing {
        Some(s) => Some(s.scales_for(&x, &w).map_err(core)?),
        None => None,
    };
    let art = run_layer(&w, &x, &cfg, method, scales).map_err(core)?;
    let split = art.split.with_factor_precision(precision);

    create_dir(&args.out)?;
    save_config(&cfg, args.out.join(RESOLVED_CONFIG))?;
    save_archive(
        &[("w_res", &split.w_res), ("a", &split.a), ("b", &split.b)],
        args.out.join("split.arhqa"),
        Dtype::F64,
    )?;
    let m = &art.metric;
    let floor = Matrix::from_diag(&[m.floor]).map_err(core)?;
    let n_rows = Matrix::from_diag(&[m.n_rows as f64]).map_err(core)?;
    save_archive(
        &[
            ("g", &m.g),
            ("g_sqrt", &m.g_sqrt),
            ("g_invsqrt", &m.g_invsqrt),
            ("floor", &floor),
            ("n_rows", &n_rows),
        ],
        args.out.join("metric.arhqa"),
        Dtype::F64,
    )?;
    if let Some(s) = &art.scales {
        let col = Matrix::new(s.len(), 1, s.as_slice().to_vec()).map_err(core)?;
        save_tensor(&col, args.out.join("scales.arhqt"))?;
    }
    write_json(
        &SplitSidecar {
            method,
            rank: split.rank,
            d_out: split.d_out(),
            d_in: split.d_in(),
            factor_precision: precision,
            params_added: split.params_added(),
            overhead_ratio: split.overhead_ratio(),
            factor_range: split.factor_range(),
            floor: m.floor,
            condition_number: m.condition_number(),
            smoothed: art.scales.is_some(),
            config: &cfg,
        },
        &args.out.join("split.json"),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    #[serde(with = "arhq_core::pipeline::db")]
    baseline_snr_db: f64,
    #[serde(with = "arhq_core::pipeline::db")]
    snr_db: f64,
    #[serde(with = "arhq_core::pipeline::db")]
    gain_db: f64,
    n_eval: usize,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Outcome {
    let cfg = load_config(args.split.join(RESOLVED_CONFIG))?;
    let w = load_tensor(&args.weight)?;
    let x_eval = load_tensor(&args.eval)?;
    let split_path = args.split.join("split.arhqa");
    let entries = load_archive(&split_path)?;
    let get = |n: &str| archive_entry(&entries, n, &split_path).cloned();
    let (w_res, a, b) = (get("w_res")?, get("a")?, get("b")?);
    let metric_path = args.split.join("metric.arhqa");
    let metric_entries = load_archive(&metric_path)?;
    let g = archive_entry(&metric_entries, "g", &metric_path)?;
    let floor = archive_entry(&metric_entries, "floor", &metric_path)?[(0, 0)];
    let n_rows = archive_entry(&metric_entries, "n_rows", &metric_path)?[(0, 0)] as usize;
    let scales_path = args.split.join("scales.arhqt");
    let scales = if scales_path.exists() {
        Some(SmoothingScales::from_vec(load_tensor(&scales_path)?.into_vec()).map_err(core)?)
    } else {
        None
    };
    if w.shape() != w_res.shape() {
        return Err(core(arhq_core::Error::DimensionMismatch {
            context: "weight vs stored split",
            left: w.shape(),
            right: w_res.shape(),
        }));
    }
    let rank = a.cols();
    let art = LayerArtifacts {
        weight: w,
        split: arhq_core::decompose::LowRankSplit {
            w_res,
            a,
            b,
            rank,
            method: SplitMethod::Arhq,
        },
        metric: ResidualMetric::from_covariance(g, floor, n_rows).map_err(core)?,
        scales,
        config: cfg.clone(),
    };
    let y = simulate_forward(&x_eval, &art, &cfg, ForwardMode::Reference).map_err(core)?;
    let base = simulate_forward(&x_eval, &art, &cfg, ForwardMode::BaselineQuant).map_err(core)?;
    let dual = simulate_forward(&x_eval, &art, &cfg, ForwardMode::DualBranch).map_err(core)?;
    let baseline_snr_db = snr(&y, &base).map_err(core)?;
    let snr_db = snr(&y, &dual).map_err(core)?;
    let gain_db = if snr_db == baseline_snr_db { 0.0 } else { snr_db - baseline_snr_db };
    create_dir(&args.out)?;
    save_config(&cfg, args.out.join(RESOLVED_CONFIG))?;
    write_json(
        &Evaluation {
            baseline_snr_db,
            snr_db,
            gain_db,
            n_eval: x_eval.rows(),
        },
        &args.out.join("evaluate.json"),
    )
}

#[derive(Serialize)]
struct SynthSummary {
    ladder_span: f64,
    condition: f64,
}

fn cmd_gen_synth(args: &GenSynthArgs) -> Outcome {
    let spec = args.synth.spec(args.seed);
    spec.validate().map_err(usage)?;
    let layer = gen_synthetic(&spec).map_err(core)?;
    create_dir(&args.out)?;
    write_json(&spec, &args.out.join(RESOLVED_CONFIG))?;
    save_tensor(&layer.w, args.out.join("w.arhqt"))?;
    save_tensor(&layer.x_calib, args.out.join("x_calib.arhqt"))?;
    save_tensor(&layer.x_eval, args.out.join("x_eval.arhqt"))?;
    write_json(
        &SynthSummary {
            ladder_span: layer.ladder_span,
            condition: layer.condition,
        },
        &args.out.join("synth.json"),
    )
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::SweepRank(a) => cmd_sweep(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
    }
}

