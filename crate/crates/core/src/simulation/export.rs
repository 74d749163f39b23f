//! Trial artifacts: per-tick CSV, summary JSON, suite tables and an SVG
//! trajectory plot. Files are written atomically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FieldModel, GapSide, Intervention, SuiteRow, TrialRecord, TrialSummary};

pub const RECORD_HEADER: [&str; 14] = [
    "t", "x", "y", "phi", "true_dL", "true_dR", "true_phi", "est_dL", "est_dR", "est_phi",
    "omega_mpc", "omega_cmd", "rho1", "intervention",
];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Writes through a sibling temporary file and renames it into place, so a
/// crash never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // Temporary files are private; outputs get ordinary permissions.
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// One CSV row, in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    #[serde(rename = "true_dL")]
    pub true_dl: f64,
    #[serde(rename = "true_dR")]
    pub true_dr: f64,
    pub true_phi: f64,
    #[serde(rename = "est_dL")]
    pub est_dl: Option<f64>,
    #[serde(rename = "est_dR")]
    pub est_dr: Option<f64>,
    pub est_phi: Option<f64>,
    pub omega_mpc: f64,
    pub omega_cmd: f64,
    pub rho1: f64,
    pub intervention: u8,
}

pub fn record_rows(record: &TrialRecord) -> Vec<CsvRow> {
    record
        .ticks
        .iter()
        .map(|k| CsvRow {
            t: k.t,
            x: k.pose.x,
            y: k.pose.y,
            phi: k.pose.yaw,
            true_dl: k.truth.d_left,
            true_dr: k.truth.d_right,
            true_phi: k.truth.heading,
            est_dl: k.estimate.map(|e| e.d_left),
            est_dr: k.estimate.map(|e| e.d_right),
            est_phi: k.estimate.map(|e| e.heading),
            omega_mpc: k.omega_mpc,
            omega_cmd: k.omega_cmd,
            rho1: k.rho1,
            intervention: u8::from(k.intervention),
        })
        .collect()
}

pub fn record_csv(record: &TrialRecord) -> Result<Vec<u8>, ExportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in record_rows(record) {
        w.serialize(row)?;
    }
    if record.ticks.is_empty() {
        w.write_record(RECORD_HEADER)?;
    }
    w.into_inner().map_err(|e| ExportError::Io(e.into_error()))
}

pub fn read_record_csv(path: &Path) -> Result<Vec<CsvRow>, ExportError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<CsvRow>, _>>()?;
    Ok(rows)
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    #[serde(flatten)]
    summary: &'a TrialSummary,
    intervention_events: &'a [Intervention],
}

pub fn summary_json(record: &TrialRecord) -> Result<String, ExportError> {
    Ok(serde_json::to_string_pretty(&SummaryDocument {
        summary: &record.summary,
        intervention_events: &record.interventions,
    })?)
}

/// Suite table: one row per trial, axis values first.
pub fn suite_table_csv(
    rows: &[SuiteRow],
    axis_names: &[String],
    axis_values: &[Vec<String>],
) -> Result<Vec<u8>, ExportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["config_index".to_string(), "seed".to_string()];
    header.extend(axis_names.iter().cloned());
    header.extend(
        [
            "distance_m",
            "duration_s",
            "interventions",
            "mean_abs_cte_m",
            "max_abs_cte_m",
            "oscillation_amplitude_m",
            "meters_per_intervention",
            "completed",
            "error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.config_index.to_string(), row.seed.to_string()];
        match axis_values.get(row.config_index) {
            Some(v) => rec.extend(v.iter().cloned()),
            None => rec.extend(std::iter::repeat_n(String::new(), axis_names.len())),
        }
        match &row.result {
            Ok(s) => rec.extend([
                s.distance_m.to_string(),
                s.duration_s.to_string(),
                s.interventions.to_string(),
                s.mean_abs_cte_m.to_string(),
                s.max_abs_cte_m.to_string(),
                s.oscillation_amplitude_m.to_string(),
                s.meters_per_intervention.map_or(String::new(), |m| m.to_string()),
                s.completed.to_string(),
                String::new(),
            ]),
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.push(e.to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| ExportError::Io(e.into_error()))
}

/// Trajectory point for plotting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    /// The robot was reset just before this point.
    pub intervention: bool,
}

impl From<&CsvRow> for PathPoint {
    fn from(r: &CsvRow) -> Self {
        Self {
            x: r.x,
            y: r.y,
            intervention: r.intervention != 0,
        }
    }
}

pub fn path_points(record: &TrialRecord) -> Vec<PathPoint> {
    record
        .ticks
        .iter()
        .map(|k| PathPoint {
            x: k.pose.x,
            y: k.pose.y,
            intervention: k.intervention,
        })
        .collect()
}

const SVG_W: f64 = 1000.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 50.0;
const MAX_PATH_POINTS: usize = 4000;

/// Standalone SVG of the field (centerline and row boundaries, broken at
/// gaps), the robot path and intervention markers. The axes are scaled
/// independently so a long, narrow lane stays readable.
pub fn trajectory_svg(field: &FieldModel, path: &[PathPoint]) -> String {
    let half = field.lane_width / 2.0;
    let length = field.length();
    let n_samples = ((length / 0.05).ceil() as usize).clamp(2, 2000);
    let samples: Vec<f64> = (0..=n_samples)
        .map(|i| length * i as f64 / n_samples as f64)
        .collect();

    let boundary = |side: f64| -> Vec<Vec<(f64, f64)>> {
        let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for &s in &samples {
            let missing = field.gap_at(s).is_some_and(|g| match g.side {
                GapSide::Both => true,
                GapSide::Left => side > 0.0,
                GapSide::Right => side < 0.0,
            });
            if missing {
                if !runs.last().expect("non-empty").is_empty() {
                    runs.push(Vec::new());
                }
                continue;
            }
            let p = field.pose_at(s, side * half, 0.0);
            runs.last_mut().expect("non-empty").push((p.x, p.y));
        }
        runs.retain(|r| r.len() >= 2);
        runs
    };
    let left = boundary(1.0);
    let right = boundary(-1.0);
    let center: Vec<(f64, f64)> = field.centerline.iter().map(|v| (v[0], v[1])).collect();

    let all = left
        .iter()
        .chain(right.iter())
        .flatten()
        .copied()
        .chain(center.iter().copied())
        .chain(path.iter().map(|p| (p.x, p.y)));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |lo: f64, hi: f64| {
        let span = (hi - lo).max(1e-6);
        (lo - 0.05 * span, hi + 0.05 * span)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let sx = (SVG_W - 2.0 * MARGIN) / (x1 - x0);
    let sy = (SVG_H - 2.0 * MARGIN) / (y1 - y0);
    let map = |x: f64, y: f64| (MARGIN + (x - x0) * sx, MARGIN + (y1 - y) * sy);
    let polyline = |pts: &[(f64, f64)], style: &str| {
        let mut d = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let (u, v) = map(x, y);
            if i > 0 {
                d.push(' ');
            }
            let _ = write!(d, "{u:.2},{v:.2}");
        }
        format!("  <polyline points=\"{d}\" {style}/>\n")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    );
    let _ = writeln!(svg, "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "  <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#999\"/>",
        SVG_W - 2.0 * MARGIN,
        SVG_H - 2.0 * MARGIN
    );
    for (text, x, y, anchor) in [
        (format!("x = {x0:.2} m"), MARGIN, SVG_H - MARGIN + 18.0, "start"),
        (format!("x = {x1:.2} m"), SVG_W - MARGIN, SVG_H - MARGIN + 18.0, "end"),
        (format!("y = {y1:.3} m"), MARGIN - 4.0, MARGIN - 6.0, "start"),
        (format!("y = {y0:.3} m"), MARGIN - 4.0, SVG_H - MARGIN + 34.0, "start"),
    ] {
        let _ = writeln!(
            svg,
            "  <text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"{anchor}\">{text}</text>"
        );
    }

    svg.push_str("  <g id=\"rows\">\n");
    for run in left.iter().chain(right.iter()) {
        svg.push_str(&polyline(run, "fill=\"none\" stroke=\"#2e7d32\" stroke-width=\"2\""));
    }
    svg.push_str("  </g>\n  <g id=\"centerline\">\n");
    svg.push_str(&polyline(
        &center,
        "fill=\"none\" stroke=\"#888\" stroke-width=\"1\" stroke-dasharray=\"6 4\"",
    ));
    svg.push_str("  </g>\n  <g id=\"path\">\n");

    // Decimate, and break the path at resets so jumps are not drawn.
    let stride = path.len().div_ceil(MAX_PATH_POINTS).max(1);
    let mut run: Vec<(f64, f64)> = Vec::new();
    let mut markers = Vec::new();
    for (i, p) in path.iter().enumerate() {
        if p.intervention {
            if let Some(&last) = run.last() {
                markers.push(last);
            }
            if run.len() >= 2 {
                svg.push_str(&polyline(&run, "fill=\"none\" stroke=\"#1565c0\" stroke-width=\"1.5\""));
            }
            run.clear();
        }
        if i % stride == 0 || p.intervention || i + 1 == path.len() || path[i + 1].intervention {
            run.push((p.x, p.y));
        }
    }
    if run.len() >= 2 {
        svg.push_str(&polyline(&run, "fill=\"none\" stroke=\"#1565c0\" stroke-width=\"1.5\""));
    }
    svg.push_str("  </g>\n  <g id=\"interventions\">\n");
    for (x, y) in markers {
        let (u, v) = map(x, y);
        let _ = writeln!(
            svg,
            "    <circle cx=\"{u:.2}\" cy=\"{v:.2}\" r=\"5\" fill=\"none\" stroke=\"#c62828\" stroke-width=\"2\"/>"
        );
    }
    svg.push_str("  </g>\n</svg>\n");
    svg
}
