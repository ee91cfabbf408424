//! Evaluation rows and their CSV serialization.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::training::TraceRow;

/// File name carries the schema version; bump it with any header change.
pub const METRICS_FILE: &str = "metrics_v1.csv";

pub const METRICS_HEADER: [&str; 12] = [
    "run_id",
    "seed",
    "mode",
    "snr",
    "bandwidth",
    "beta",
    "steps",
    "distortion_l2",
    "rate_bits",
    "transmission_bits",
    "mmd",
    "wall_seconds",
];

/// One evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub mode: String,
    pub snr: f64,
    /// Transmitted slots; `None` for an unrestricted channel.
    pub bandwidth: Option<usize>,
    pub beta: f64,
    pub steps: usize,
    /// Mean over examples of the per-pixel squared error.
    pub distortion_l2: f64,
    pub rate_bits: f64,
    pub transmission_bits: f64,
    pub mmd: Option<f64>,
    pub wall_seconds: f64,
}

/// Nine significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

impl MetricsRecord {
    fn fields(&self) -> [String; 12] {
        [
            self.run_id.clone(),
            self.seed.to_string(),
            self.mode.clone(),
            format_float(self.snr),
            self.bandwidth.map(|b| b.to_string()).unwrap_or_default(),
            format_float(self.beta),
            self.steps.to_string(),
            format_float(self.distortion_l2),
            format_float(self.rate_bits),
            format_float(self.transmission_bits),
            self.mmd.map(format_float).unwrap_or_default(),
            format_float(self.wall_seconds),
        ]
    }
}

pub fn write_metrics<W: Write>(rows: &[MetricsRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        out.write_record(r.fields())?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `rows` to `dir/name`, creating `dir` if needed.
pub fn save_metrics(rows: &[MetricsRecord], dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    write_metrics(rows, std::fs::File::create(&path)?)?;
    Ok(path)
}

pub const TRACE_FILE: &str = "trace_v1.csv";

pub const TRACE_HEADER: [&str; 9] = [
    "stage",
    "step",
    "distortion",
    "rate",
    "posterior_kl",
    "alv_kl",
    "prior_fit",
    "beta",
    "total",
];

/// Training loss terms in nats per example, one row per logged step.
pub fn write_trace<W: Write>(rows: &[TraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in rows {
        let b = &r.breakdown;
        out.write_record([
            r.stage.as_str().to_string(),
            r.step.to_string(),
            format_float(b.distortion),
            format_float(b.rate),
            format_float(b.posterior_kl),
            b.alv_kl.map(format_float).unwrap_or_default(),
            b.prior_fit.map(format_float).unwrap_or_default(),
            format_float(b.beta),
            format_float(b.total),
        ])?;
    }
    out.flush()?;
    Ok(())
}
