//! CSV and JSON report files.

use std::fs;
use std::path::Path;

use arhq_core::pipeline::{aggregate, format_db, AggregateRow, LayerReport, Spectrum};
use serde::Serialize;

use crate::error::{IoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: [&str; 8] = [
    "layer",
    "method",
    "variant",
    "snr_db",
    "gain_db",
    "objective",
    "params_added",
    "seed",
];

/// Label of the appended cross-layer mean rows.
pub const AGGREGATE_LAYER: &str = "average";

#[derive(Serialize)]
struct JsonReport<'a> {
    reports: &'a [LayerReport],
    aggregate: Vec<AggregateRow>,
}

fn number(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        format_db(v)
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// One row per (layer, method, variant) followed by the aggregate rows.
/// The aggregate seed cell is that of the first report.
pub fn render_csv(reports: &[LayerReport]) -> Result<String> {
    let origin = Path::new("<report>");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_error(origin))?;
    for rep in reports {
        for row in &rep.rows {
            w.write_record([
                rep.layer.as_str(),
                row.method.as_str(),
                row.variant.as_str(),
                &format_db(row.snr_db),
                &format_db(row.gain_db),
                &number(row.objective),
                &row.params_added.to_string(),
                &rep.seed.to_string(),
            ])
            .map_err(csv_error(origin))?;
        }
    }
    let seed = reports.first().map(|r| r.seed).unwrap_or(0).to_string();
    for agg in aggregate(reports) {
        w.write_record([
            AGGREGATE_LAYER,
            agg.method.as_str(),
            agg.variant.as_str(),
            &format_db(agg.snr_db),
            &format_db(agg.gain_db),
            &number(agg.objective),
            &number(agg.params_added),
            &seed,
        ])
        .map_err(csv_error(origin))?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::io(origin, e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn render_json(reports: &[LayerReport]) -> String {
    let doc = JsonReport {
        reports,
        aggregate: aggregate(reports),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(reports: &[LayerReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    if reports.is_empty() {
        return Err(IoError::Core(arhq_core::Error::param("reports", "nothing to write")));
    }
    let text = match format {
        ReportFormat::Csv => render_csv(reports)?,
        ReportFormat::Json => render_json(reports),
    };
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// `layer,variant,index,sigma` rows, one per singular value.
pub fn write_spectra(spectra: &[(String, Vec<Spectrum>)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "variant", "index", "sigma"]).map_err(csv_error(path))?;
    for (layer, list) in spectra {
        for s in list {
            for (i, sigma) in s.sigma.iter().enumerate() {
                w.write_record([layer.as_str(), s.variant.as_str(), &(i + 1).to_string(), &number(*sigma)])
                    .map_err(csv_error(path))?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| IoError::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}
