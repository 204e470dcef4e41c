//! Per-trial error tables and summary statistics. Units switch to mm and
//! degrees here and nowhere else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rams_core::geometry::{per_axis_error, pose_error, RigidTransform};

use crate::workflow::TrialReport;

pub const TRIALS_CSV: &str = "trials.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORTS_JSON: &str = "reports.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no rows to summarize")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unknown report format {0:?} (expected csv or json)")]
    UnknownFormat(String),
}

/// One trial's error, mm and degrees. Axis components are signed
/// (achieved minus planned).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub trial: u32,
    pub tx_err: f64,
    pub ty_err: f64,
    pub tz_err: f64,
    pub t_norm: f64,
    pub rx_err: f64,
    pub ry_err: f64,
    pub rz_err: f64,
    pub r_angle: f64,
}

pub const COLUMNS: [&str; 8] = ["tx_err", "ty_err", "tz_err", "t_norm", "rx_err", "ry_err", "rz_err", "r_angle"];

impl ErrorRow {
    pub fn from_poses(trial: u32, planned: &RigidTransform, achieved: &RigidTransform) -> Self {
        let e = pose_error(planned, achieved);
        let a = per_axis_error(planned, achieved);
        let mm = |m: f64| m * 1e3;
        Self {
            trial,
            tx_err: mm(a.translation.x),
            ty_err: mm(a.translation.y),
            tz_err: mm(a.translation.z),
            t_norm: mm(e.translation_error),
            rx_err: a.rotation.x.to_degrees(),
            ry_err: a.rotation.y.to_degrees(),
            rz_err: a.rotation.z.to_degrees(),
            r_angle: e.rotation_error.to_degrees(),
        }
    }

    pub fn from_report(r: &TrialReport) -> Self {
        Self::from_poses(r.trial, &r.planned_pose, &r.achieved_pose)
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.tx_err,
            self.ty_err,
            self.tz_err,
            self.t_norm,
            self.rx_err,
            self.ry_err,
            self.rz_err,
            self.r_angle,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single row.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ColumnStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    #[serde(default)]
    pub skipped: usize,
    pub columns: BTreeMap<String, ColumnStats>,
}

impl Summary {
    pub fn of(rows: &[ErrorRow]) -> Result<Self, ReportError> {
        if rows.is_empty() {
            return Err(ReportError::Empty);
        }
        let columns = COLUMNS
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let v: Vec<f64> = rows.iter().map(|r| r.values()[i]).collect();
                (name.to_string(), ColumnStats::of(&v).expect("rows are non-empty"))
            })
            .collect();
        Ok(Self {
            count: rows.len(),
            skipped: 0,
            columns,
        })
    }

    pub fn column(&self, name: &str) -> &ColumnStats {
        &self.columns[name]
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv(rows: &[ErrorRow], path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<ErrorRow>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

pub fn write_summary_json(summary: &Summary, path: &Path) -> Result<(), ReportError> {
    fs::write(path, serde_json::to_string_pretty(summary)?).map_err(io_err(path))
}

pub fn write_summary_csv(summary: &Summary, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["column", "mean", "std", "min", "max"]).map_err(csv_err(path))?;
    for name in COLUMNS {
        let c = summary.column(name);
        w.write_record([name.to_string(), c.mean.to_string(), c.std.to_string(), c.min.to_string(), c.max.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `trials.csv` and `summary.json` into `dir`, creating it.
pub fn write_report_dir(rows: &[ErrorRow], skipped: usize, dir: &Path) -> Result<Summary, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut summary = Summary::of(rows)?;
    summary.skipped = skipped;
    write_csv(rows, &dir.join(TRIALS_CSV))?;
    write_summary_json(&summary, &dir.join(SUMMARY_JSON))?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// Recomputes the summary from `trials.csv` in `input` (a directory or the
/// CSV itself) and writes it next to it; returns the written path.
pub fn report(input: &Path, format: Format) -> Result<(Summary, PathBuf), ReportError> {
    let (csv_path, dir) = if input.is_dir() {
        (input.join(TRIALS_CSV), input.to_path_buf())
    } else {
        (input.to_path_buf(), input.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    let rows = read_csv(&csv_path)?;
    let mut summary = Summary::of(&rows)?;
    // Keep the skipped count from an earlier run if one was recorded.
    if let Ok(text) = fs::read_to_string(dir.join(SUMMARY_JSON)) {
        if let Ok(old) = serde_json::from_str::<Summary>(&text) {
            summary.skipped = old.skipped;
        }
    }
    let out = match format {
        Format::Json => {
            let p = dir.join(SUMMARY_JSON);
            write_summary_json(&summary, &p)?;
            p
        }
        Format::Csv => {
            let p = dir.join(SUMMARY_CSV);
            write_summary_csv(&summary, &p)?;
            p
        }
    };
    Ok((summary, out))
}
