//! Ingestion of IMS run-to-failure snapshot directories and generic CSV series.
//!
//! An IMS test directory holds one ASCII file per recording burst. Each file
//! name is the recording time (`yyyy.MM.dd.HH.mm.ss`, UTC) and each line holds
//! one sample per channel. A snapshot is reduced to a single trend point by
//! [`aggregate_snapshot`], producing a [`SnapshotSeries`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Nominal sample count of one IMS snapshot (1 s at 20 kHz).
pub const IMS_ROWS_PER_SNAPSHOT: usize = 20480;

const IMS_NAME_FORMAT: &str = "%Y.%m.%d.%H.%M.%S";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotFileRef {
    pub path: PathBuf,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
}

#[derive(Debug, Clone, Default)]
pub struct ScanResult {
    pub refs: Vec<SnapshotFileRef>,
    /// Names that did not parse as a recording time (or repeated one).
    pub skipped: Vec<String>,
}

/// Parse an IMS file name into epoch seconds.
pub fn parse_snapshot_name(name: &str) -> Option<i64> {
    // chrono accepts unpadded fields; the release always pads, so insist on it.
    if name.len() != 19 {
        return None;
    }
    NaiveDateTime::parse_from_str(name, IMS_NAME_FORMAT)
        .ok()
        .map(|t| t.and_utc().timestamp())
}

pub fn scan_ims_directory(dir: &Path) -> Result<ScanResult> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut refs = Vec::new();
    let mut skipped = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_file = entry.file_type().map(|t| t.is_file()).unwrap_or(false);
        match parse_snapshot_name(&name) {
            Some(timestamp) if is_file => refs.push(SnapshotFileRef {
                path: entry.path(),
                timestamp,
            }),
            _ => skipped.push(name),
        }
    }
    refs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.path.cmp(&b.path)));
    let mut unique: Vec<SnapshotFileRef> = Vec::with_capacity(refs.len());
    for r in refs {
        if unique.last().is_some_and(|u| u.timestamp == r.timestamp) {
            skipped.push(r.path.to_string_lossy().into_owned());
        } else {
            unique.push(r);
        }
    }
    skipped.sort();
    if unique.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no snapshot files named yyyy.MM.dd.HH.mm.ss in {}",
            dir.display()
        )));
    }
    Ok(ScanResult {
        refs: unique,
        skipped,
    })
}

/// Raw samples of one snapshot, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    samples: Vec<f64>,
    rows: usize,
    channels: usize,
    warning: Option<String>,
}

impl SnapshotMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        let mut samples = Vec::with_capacity(rows.len() * channels);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != channels {
                return Err(Error::Dimension {
                    what: format!("snapshot row {i}"),
                    expected: channels,
                    found: row.len(),
                });
            }
            samples.extend_from_slice(row);
        }
        Ok(SnapshotMatrix {
            samples,
            rows: rows.len(),
            channels,
            warning: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Set when the row count differs from [`IMS_ROWS_PER_SNAPSHOT`].
    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.samples[r * self.channels..(r + 1) * self.channels]
    }

    pub fn column(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples
            .iter()
            .skip(channel)
            .step_by(self.channels.max(1))
            .copied()
    }

    /// Tab-separated text in the IMS layout.
    pub fn to_ims_text(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 8);
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                if c > 0 {
                    out.push('\t');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_ims_file(content: &str, expected_channels: usize) -> Result<SnapshotMatrix> {
    if expected_channels == 0 {
        return Err(Error::Config("expected_channels must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(IMS_ROWS_PER_SNAPSHOT * expected_channels);
    let mut rows = 0;
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for token in line.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("non-numeric token {token:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite sample {token:?}"),
                });
            }
            count += 1;
            if count <= expected_channels {
                samples.push(v);
            }
        }
        if count != expected_channels {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {expected_channels} columns, found {count}"),
            });
        }
        rows += 1;
    }
    let warning = (rows != IMS_ROWS_PER_SNAPSHOT)
        .then(|| format!("snapshot has {rows} rows, expected {IMS_ROWS_PER_SNAPSHOT}"));
    Ok(SnapshotMatrix {
        samples,
        rows,
        channels: expected_channels,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Rms,
    MeanAbs,
    Peak,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rms" => Ok(Aggregation::Rms),
            "mean_abs" => Ok(Aggregation::MeanAbs),
            "peak" => Ok(Aggregation::Peak),
            other => Err(Error::Config(format!(
                "unknown aggregation {other:?} (expected rms, mean_abs or peak)"
            ))),
        }
    }
}

pub fn aggregate_snapshot(
    matrix: &SnapshotMatrix,
    channel: usize,
    method: Aggregation,
) -> Result<f64> {
    if channel >= matrix.channels {
        return Err(Error::Index {
            index: channel,
            len: matrix.channels,
        });
    }
    if matrix.rows == 0 {
        return Err(Error::Domain("cannot aggregate an empty snapshot".into()));
    }
    let n = matrix.rows as f64;
    let col = matrix.column(channel);
    Ok(match method {
        Aggregation::Rms => (col.map(|x| x * x).sum::<f64>() / n).sqrt(),
        Aggregation::MeanAbs => col.map(f64::abs).sum::<f64>() / n,
        Aggregation::Peak => col.map(f64::abs).fold(0.0, f64::max),
    })
}

/// Ordered `(timestamp, value)` trend points from one source.
///
/// Timestamps are strictly increasing. Values may be non-finite when a CSV
/// cell was missing; `preprocess::fill_missing` removes those.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    points: Vec<(f64, f64)>,
    source_label: String,
    channel: usize,
}

impl SnapshotSeries {
    pub fn new(points: Vec<(f64, f64)>, source_label: impl Into<String>, channel: usize) -> Result<Self> {
        for (i, w) in points.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Validation(format!(
                    "timestamps not strictly increasing at row {} ({} then {})",
                    i + 1,
                    w[0].0,
                    w[1].0
                )));
            }
        }
        if let Some(p) = points.iter().position(|p| !p.0.is_finite()) {
            return Err(Error::Validation(format!("non-finite timestamp at row {p}")));
        }
        Ok(SnapshotSeries {
            points,
            source_label: source_label.into(),
            channel,
        })
    }

    /// Series with synthesized timestamps `0, 1, 2, ...`.
    pub fn from_values(values: &[f64], source_label: impl Into<String>) -> Self {
        SnapshotSeries {
            points: values.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect(),
            source_label: source_label.into(),
            channel: 0,
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    /// True when every value is finite.
    pub fn is_complete(&self) -> bool {
        self.points.iter().all(|p| p.1.is_finite())
    }

    /// Same timestamps with replaced values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.points.len() {
            return Err(Error::Dimension {
                what: "series values".into(),
                expected: self.points.len(),
                found: values.len(),
            });
        }
        Ok(SnapshotSeries {
            points: self.points.iter().zip(values).map(|(p, &v)| (p.0, v)).collect(),
            source_label: self.source_label.clone(),
            channel: self.channel,
        })
    }

    pub(crate) fn with_points(&self, points: Vec<(f64, f64)>) -> Self {
        SnapshotSeries {
            points,
            source_label: self.source_label.clone(),
            channel: self.channel,
        }
    }

    /// Canonical `timestamp,value` CSV.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("timestamp,value\n");
        for (t, v) in &self.points {
            writeln!(out, "{t},{v}").unwrap();
        }
        out
    }

    /// `index,value` CSV with the position in the series as the index.
    pub fn to_indexed_csv_string(&self) -> String {
        let mut out = String::from("index,value\n");
        for (i, (_, v)) in self.points.iter().enumerate() {
            writeln!(out, "{i},{v}").unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads the canonical `timestamp,value` form written by [`Self::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        load_csv_series(path, 1, Some(0))
    }
}

pub fn ingest_ims(
    dir: &Path,
    expected_channels: usize,
    channel: usize,
    method: Aggregation,
) -> Result<(SnapshotSeries, ScanResult)> {
    if channel >= expected_channels {
        return Err(Error::Index {
            index: channel,
            len: expected_channels,
        });
    }
    let scan = scan_ims_directory(dir)?;
    // collect() keeps input order, so the result matches a sequential pass.
    let points: Vec<(f64, f64)> = crate::pool().install(|| {
        scan.refs
            .par_iter()
            .map(|r| {
                let content = fs::read_to_string(&r.path).map_err(|e| Error::io(&r.path, e))?;
                let matrix = parse_ims_file(&content, expected_channels).map_err(|e| match e {
                    Error::Parse { line, message } => Error::Parse {
                        line,
                        message: format!("{}: {message}", r.path.display()),
                    },
                    other => other,
                })?;
                Ok((r.timestamp as f64, aggregate_snapshot(&matrix, channel, method)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let series = SnapshotSeries::new(points, dir.display().to_string(), channel)?;
    Ok((series, scan))
}

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Some(f64::NAN);
    }
    cell.parse().ok()
}

/// Load one column of a comma-separated file as a series.
///
/// A header line is detected when the first row's value cell is not numeric.
/// Empty or `NaN` value cells become missing (non-finite) values.
pub fn load_csv_series(path: &Path, value_column: usize, timestamp_column: Option<usize>) -> Result<SnapshotSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut series = parse_csv_series(&text, value_column, timestamp_column)?;
    series.source_label = path.display().to_string();
    series.channel = value_column;
    Ok(series)
}

pub fn parse_csv_series(text: &str, value_column: usize, timestamp_column: Option<usize>) -> Result<SnapshotSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let cell = record.get(value_column).ok_or_else(|| Error::Parse {
            line,
            message: format!("missing value column {value_column}"),
        })?;
        let value = match parse_cell(cell) {
            Some(v) => v,
            None if idx == 0 => continue,
            None => {
                return Err(Error::Parse {
                    line,
                    message: format!("non-numeric value {cell:?}"),
                })
            }
        };
        let timestamp = match timestamp_column {
            None => points.len() as f64,
            Some(tc) => {
                let cell = record.get(tc).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing timestamp column {tc}"),
                })?;
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric timestamp {cell:?}"),
                })?
            }
        };
        points.push((timestamp, value));
    }
    if points.is_empty() {
        return Err(Error::EmptyDataset("CSV contains no data rows".into()));
    }
    SnapshotSeries::new(points, "csv", value_column)
}
