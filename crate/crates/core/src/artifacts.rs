//! On-disk run artifacts.
//!
//! Every CLI run writes into a directory named by a short hash of the
//! resolved configuration, so reruns of the same config land in the same
//! place and different configs never collide. JSON reports are pretty
//! printed, CSV tables use shortest round-trip float formatting, and the
//! measured-trace CSV can be read back for inversion against recorded data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assemble::TraceOperator;
use crate::config::ExperimentConfig;
use crate::convergence::{SpatialReport, TemporalReport};
use crate::error::{Error, Result};
use crate::forward::{MeasurementTrace, TimeGrid};
use crate::inversion::IterationRecord;
use crate::probe::PairRow;
use crate::spaces::FunctionSpaces;

/// First 12 hex digits of the SHA-256 of `text`.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut hex = String::with_capacity(12);
    for byte in &digest[..6] {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Creates (or reuses) the run directory for `config` under `base` and
/// writes the resolved configuration into it.
///
/// The directory is named by [`content_hash`] of the canonical TOML, so the
/// same config always maps to the same directory. If the directory already
/// holds a different resolved config the old artifacts are stale; a warning
/// is logged and the config file is replaced.
pub fn prepare_out_dir(base: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    let canonical = config.canonical_toml()?;
    let dir = base.join(content_hash(&canonical));
    fs::create_dir_all(&dir)?;
    let config_path = dir.join("resolved_config.toml");
    if let Ok(existing) = fs::read_to_string(&config_path) {
        if existing != canonical {
            log::warn!(
                "{} holds a different resolved config; replacing it",
                dir.display()
            );
        }
    }
    fs::write(&config_path, canonical)?;
    Ok(dir)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Best-effort `error.json` describing a failed run. Errors while writing
/// the error report are swallowed: this runs on the failure path.
pub fn write_error(dir: &Path, err: &Error) {
    let report = serde_json::json!({
        "error": err.to_string(),
        "config_error": err.is_config_error(),
    });
    let _ = write_json(&dir.join("error.json"), &report);
}

/// Writes a CSV table. Every row must match the header width.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        assert_eq!(row.len(), header.len(), "csv row width");
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn fmt(x: f64) -> String {
    // Display prints the shortest decimal that parses back to the same
    // bits, so CSV round trips are exact.
    format!("{x}")
}

/// Writes a measured boundary trace as CSV: one row per time node, columns
/// `time` then interleaved `ux_i,uy_i` per trace node, ascending wall arc.
pub fn write_trace_csv(path: &Path, grid: &TimeGrid, trace: &MeasurementTrace) -> Result<()> {
    if trace.values.len() != grid.n_steps + 1 {
        return Err(Error::GridMismatch(format!(
            "trace has {} time nodes, grid expects {}",
            trace.values.len(),
            grid.n_steps + 1
        )));
    }
    let n_nodes = trace.values[0].len() / 2;
    let labels: Vec<String> = (0..n_nodes)
        .flat_map(|i| [format!("ux_{i}"), format!("uy_{i}")])
        .collect();
    let mut header = vec!["time"];
    header.extend(labels.iter().map(String::as_str));
    let rows = trace.values.iter().enumerate().map(|(n, v)| {
        let mut row = Vec::with_capacity(v.len() + 1);
        row.push(fmt(grid.time(n)));
        row.extend(v.iter().map(|&x| fmt(x)));
        row
    });
    write_csv(path, &header, rows)
}

/// Reads a trace CSV back onto the expected operator and grid.
///
/// The file is user input, so every shape or parse problem is reported as a
/// config error naming the offending line.
pub fn read_trace_csv(path: &Path, op: &TraceOperator, grid: &TimeGrid) -> Result<MeasurementTrace> {
    let reject = |message: String| Error::Config {
        key: "inversion.data".into(),
        message: format!("{}: {message}", path.display()),
    };
    let text = fs::read_to_string(path)
        .map_err(|e| reject(format!("cannot read trace csv ({e})")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| reject("empty trace csv".into()))?;
    let width = header.split(',').count();
    if width != op.dim() + 1 {
        return Err(reject(format!(
            "header has {width} columns, the measured arc needs {}",
            op.dim() + 1
        )));
    }

    let mut values = Vec::with_capacity(grid.n_steps + 1);
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(reject(format!(
                "line {} has {} columns, expected {width}",
                idx + 2,
                fields.len()
            )));
        }
        let mut parsed = Vec::with_capacity(width);
        for field in &fields {
            let x: f64 = field
                .parse()
                .map_err(|_| reject(format!("line {}: `{field}` is not a number", idx + 2)))?;
            parsed.push(x);
        }
        let n = values.len();
        let expected = grid.time(n);
        if (parsed[0] - expected).abs() > 1e-9 * grid.t_final.max(1.0) {
            return Err(reject(format!(
                "line {}: time {} does not match grid node {n} at {expected}",
                idx + 2,
                parsed[0]
            )));
        }
        values.push(DVector::from_iterator(width - 1, parsed[1..].iter().copied()));
    }
    if values.len() != grid.n_steps + 1 {
        return Err(reject(format!(
            "{} data rows, the grid has {} time nodes",
            values.len(),
            grid.n_steps + 1
        )));
    }
    Ok(MeasurementTrace {
        values,
        weights: grid.trapezoid_weights(),
    })
}

/// Gauss-Newton iteration history as CSV.
pub fn write_iterations_csv(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let header = [
        "iter",
        "misfit",
        "gradient_norm",
        "step_norm",
        "lambda",
        "accepted",
    ];
    let rows = history.iter().map(|r| {
        vec![
            r.iter.to_string(),
            fmt(r.misfit),
            fmt(r.gradient_norm),
            fmt(r.step_norm),
            fmt(r.lambda),
            r.accepted.to_string(),
        ]
    });
    write_csv(path, &header, rows)
}

/// Stability-probe pair table as CSV.
pub fn write_pairs_csv(path: &Path, pairs: &[PairRow]) -> Result<()> {
    let header = [
        "index",
        "kind",
        "coefficient_distance",
        "trace_distance",
        "ratio",
    ];
    let rows = pairs.iter().map(|p| {
        vec![
            p.index.to_string(),
            p.kind.as_str().to_string(),
            fmt(p.coefficient_distance),
            fmt(p.trace_distance),
            fmt(p.ratio),
        ]
    });
    write_csv(path, &header, rows)
}

/// Spatial convergence table as CSV.
pub fn write_spatial_csv(path: &Path, report: &SpatialReport) -> Result<()> {
    let header = [
        "level",
        "h",
        "n_steps",
        "velocity_l2",
        "velocity_h1",
        "pressure_l2",
        "trace_l2",
    ];
    let rows = report.levels.iter().map(|l| {
        vec![
            l.level.to_string(),
            fmt(l.h),
            l.n_steps.to_string(),
            fmt(l.errors.velocity_l2),
            fmt(l.errors.velocity_h1),
            fmt(l.errors.pressure_l2),
            fmt(l.errors.trace_l2),
        ]
    });
    write_csv(path, &header, rows)
}

/// Temporal self-convergence table as CSV.
pub fn write_temporal_csv(path: &Path, report: &TemporalReport) -> Result<()> {
    let header = ["n_steps", "dt", "gap"];
    let rows = report
        .steps
        .iter()
        .skip(1)
        .zip(report.dts.iter().zip(&report.gaps))
        .map(|(&n, (&dt, &gap))| vec![n.to_string(), fmt(dt), fmt(gap)]);
    write_csv(path, &header, rows)
}

/// Mesh geometry dump for plotting.
#[derive(Debug, Serialize)]
pub struct MeshReport {
    pub length: f64,
    pub height: f64,
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub velocity_dim: usize,
    pub pressure_dim: usize,
    pub n_inlet_edges: usize,
    pub n_outlet_edges: usize,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn mesh_report(spaces: &FunctionSpaces) -> MeshReport {
    let mesh = &spaces.mesh;
    MeshReport {
        length: mesh.length,
        height: mesh.height,
        n_vertices: mesh.vertices.len(),
        n_triangles: mesh.triangles.len(),
        velocity_dim: spaces.velocity_dim(),
        pressure_dim: spaces.pressure_dim(),
        n_inlet_edges: spaces.inlet_edges.len(),
        n_outlet_edges: spaces.outlet_edges.len(),
        vertices: mesh.vertices.clone(),
        triangles: mesh.triangles.clone(),
    }
}
