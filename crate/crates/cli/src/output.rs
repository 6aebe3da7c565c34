//! CSV rows and geodesic files.
//!
//! Column order is part of the interface; append new columns at the end.

use std::io::Write;
use std::path::{Path, PathBuf};

use geoflow::{ChebyshevSeries, SolveReport};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::CliError;

/// One solve. `nodes` is the gradient-descent quadrature size and empty for
/// the heat flow; failed solves have empty numeric fields and an `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub surface: String,
    pub method: String,
    pub degree: usize,
    pub nodes: Option<usize>,
    pub length: Option<f64>,
    pub energy: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub wall_time_ms: Option<f64>,
    pub converged: bool,
    pub error: String,
}

impl ResultRow {
    pub fn solved(surface: &str, method: Method, degree: usize, nodes: Option<usize>, r: &SolveReport) -> Self {
        Self {
            surface: surface.into(),
            method: method_name(method).into(),
            degree,
            nodes,
            length: Some(r.length),
            energy: Some(r.energy),
            iterations: Some(r.iterations),
            residual: Some(r.residual),
            wall_time_ms: Some(r.wall_time.as_secs_f64() * 1e3),
            converged: r.converged,
            error: String::new(),
        }
    }

    pub fn failed(surface: &str, method: Method, degree: usize, nodes: Option<usize>, err: &geoflow::Error) -> Self {
        Self {
            surface: surface.into(),
            method: method_name(method).into(),
            degree,
            nodes,
            length: None,
            energy: None,
            iterations: None,
            residual: None,
            wall_time_ms: None,
            converged: false,
            error: err.to_string(),
        }
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Pde => "pde",
        Method::Gd => "gd",
        Method::Both => "both",
    }
}

/// `alpha, tau, energy`: one line per accepted step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub alpha: f64,
    pub tau: f64,
    pub energy: f64,
}

/// Fitted decay rate for one sweep value; `rate` is empty when the fit
/// window held too few samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub value: f64,
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub samples: usize,
    pub fit_skipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Start coordinates separated by `;`.
    pub start: String,
    pub length: Option<f64>,
    pub energy: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_time_ms: Option<f64>,
    pub converged: bool,
    pub error: String,
}

/// Writes rows with a header line, even when `rows` is empty.
pub fn write_csv<T: Serialize>(out: Option<&Path>, rows: &[T], header: &[&str]) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(
            std::fs::File::create(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    let io = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))
}

pub const RESULT_HEADER: &[&str] = &[
    "surface",
    "method",
    "degree",
    "nodes",
    "length",
    "energy",
    "iterations",
    "residual",
    "wall_time_ms",
    "converged",
    "error",
];
pub const TRACE_HEADER: &[&str] = &["alpha", "tau", "energy"];
pub const EPOCH_HEADER: &[&str] = &[
    "epoch",
    "start",
    "length",
    "energy",
    "iterations",
    "wall_time_ms",
    "converged",
    "error",
];

pub fn rate_header(parameter: &'static str) -> [&'static str; 5] {
    [parameter, "rate", "r_squared", "samples", "fit_skipped"]
}

/// Chebyshev coefficients of a solved geodesic on `s ∈ [0, 1]`
/// (`z = 2s - 1`), one row per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicFile {
    pub surface: String,
    pub method: String,
    pub degree: usize,
    pub length: f64,
    pub coefficients: Vec<Vec<f64>>,
}

impl GeodesicFile {
    pub fn new(surface: &str, method: Method, length: f64, series: &ChebyshevSeries) -> Self {
        Self {
            surface: surface.into(),
            method: method_name(method).into(),
            degree: series.degree(),
            length,
            coefficients: (0..series.dim()).map(|i| series.row(i)).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Output(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
    }
}

/// `dir/stem-<suffix>.<ext>` next to `out`.
pub fn sibling(out: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}-{suffix}.{ext}"))
}
