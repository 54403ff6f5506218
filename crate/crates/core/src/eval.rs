//! Forecast metrics and one-step-ahead prediction traces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::preprocess::{MinMaxScaler, SplitDataset, WindowedDataset};
use crate::train::predict_all;

/// Targets with `|y|` below this are left out of MAPE.
pub const MAPE_ZERO_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Space {
    #[default]
    Scaled,
    Original,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Scaled => "scaled",
            Space::Original => "original",
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(Space::Scaled),
            "original" => Ok(Space::Original),
            other => Err(Error::Config(format!("unknown space {other:?} (expected scaled or original)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    nmae: Option<f64>,
    mape: Option<f64>,
    pub n: usize,
    pub mape_excluded: usize,
    pub space: Space,
}

impl MetricsReport {
    /// MAE over the range of the actuals; undefined for constant actuals.
    pub fn nmae(&self) -> Result<f64> {
        self.nmae.ok_or(Error::Undefined("NMAE"))
    }

    /// Mean absolute percentage error as a fraction; undefined when every
    /// actual is (near) zero.
    pub fn mape(&self) -> Result<f64> {
        self.mape.ok_or(Error::Undefined("MAPE"))
    }

    pub fn with_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }
}

pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricsReport> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension {
            what: "metric inputs".into(),
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::EmptyDataset("metrics over zero points".into()));
    }
    let n = actual.len();
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut pct = 0.0;
    let mut excluded = 0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&y, &p) in actual.iter().zip(predicted) {
        let e = y - p;
        sq += e * e;
        abs += e.abs();
        if y.abs() >= MAPE_ZERO_THRESHOLD {
            pct += e.abs() / y.abs();
        } else {
            excluded += 1;
        }
        lo = lo.min(y);
        hi = hi.max(y);
    }
    let rmse = (sq / n as f64).sqrt();
    let mae = abs / n as f64;
    let range = hi - lo;
    Ok(MetricsReport {
        // Equal-magnitude errors can leave the rounded RMSE an ulp under MAE.
        rmse: rmse.max(mae),
        mae,
        nmae: (range > 0.0).then(|| mae / range),
        mape: (excluded < n).then(|| pct / (n - excluded) as f64),
        n,
        mape_excluded: excluded,
        space: Space::Scaled,
    })
}

/// Header of the metrics CSV.
pub const METRICS_HEADER: &str = "dataset,space,n,rmse,mae,nmae,mape,mape_excluded";

/// One row per `(dataset label, report)`; undefined metrics are left empty.
pub fn metrics_to_csv(rows: &[(String, MetricsReport)]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{METRICS_HEADER}\n");
    for (label, r) in rows {
        writeln!(
            out,
            "{label},{},{},{},{},{},{},{}",
            r.space.as_str(),
            r.n,
            r.rmse,
            r.mae,
            opt(r.nmae),
            opt(r.mape),
            r.mape_excluded
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub origin_index: usize,
    pub timestamp: f64,
    pub actual: f64,
    pub predicted: f64,
    pub split: SplitTag,
}

/// Actual-versus-predicted rows, one per window target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTrace {
    pub rows: Vec<TraceRow>,
    pub space: Space,
}

impl PredictionTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn actual(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.actual).collect()
    }

    pub fn predicted(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.predicted).collect()
    }

    /// Rows tagged with `tag`, in order.
    pub fn subset(&self, tag: SplitTag) -> PredictionTrace {
        PredictionTrace {
            rows: self.rows.iter().filter(|r| r.split == tag).copied().collect(),
            space: self.space,
        }
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        Ok(compute_metrics(&self.actual(), &self.predicted())?.with_space(self.space))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("origin_index,timestamp,actual,predicted,split\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.origin_index,
                r.timestamp,
                r.actual,
                r.predicted,
                r.split.as_str()
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn to_space(values: Vec<f64>, scaler: Option<&MinMaxScaler>, space: Space) -> Result<Vec<f64>> {
    match space {
        Space::Scaled => Ok(values),
        Space::Original => {
            let s = scaler.ok_or_else(|| {
                Error::Config("original-space output needs a fitted scaler".into())
            })?;
            Ok(values.into_iter().map(|v| s.inverse(v)).collect())
        }
    }
}

fn trace_from(
    ds: &WindowedDataset,
    predicted: Vec<f64>,
    scaler: Option<&MinMaxScaler>,
    space: Space,
    tag: SplitTag,
) -> Result<PredictionTrace> {
    let actual = to_space(ds.targets().to_vec(), scaler, space)?;
    let predicted = to_space(predicted, scaler, space)?;
    let rows = (0..ds.len())
        .map(|i| TraceRow {
            origin_index: ds.origin_indices()[i],
            timestamp: ds.timestamps()[i],
            actual: actual[i],
            predicted: predicted[i],
            split: tag,
        })
        .collect();
    Ok(PredictionTrace { rows, space })
}

/// Teacher-forced one-step-ahead predictions: every target is predicted from
/// the true preceding window, never from earlier predictions.
pub fn one_step_predictions(
    model: &ModelParams,
    ds: &WindowedDataset,
    scaler: Option<&MinMaxScaler>,
    space: Space,
    tag: SplitTag,
) -> Result<PredictionTrace> {
    if let Some(w) = model.window() {
        if w != ds.window_length() {
            return Err(Error::Config(format!(
                "model expects windows of {w}, dataset has {}",
                ds.window_length()
            )));
        }
    }
    if space == Space::Original && scaler.is_none() {
        return Err(Error::Config("original-space output needs a fitted scaler".into()));
    }
    let predicted = predict_all(model, ds)?;
    trace_from(ds, predicted, scaler, space, tag)
}

/// Train rows followed by test rows.
pub fn split_trace(
    model: &ModelParams,
    split: &SplitDataset,
    scaler: Option<&MinMaxScaler>,
    space: Space,
) -> Result<PredictionTrace> {
    let mut trace = one_step_predictions(model, &split.train, scaler, space, SplitTag::Train)?;
    let test = one_step_predictions(model, &split.test, scaler, space, SplitTag::Test)?;
    trace.rows.extend(test.rows);
    Ok(trace)
}

/// Naive forecaster that repeats the last observed value of each window.
pub fn persistence_trace(
    ds: &WindowedDataset,
    scaler: Option<&MinMaxScaler>,
    space: Space,
    tag: SplitTag,
) -> Result<PredictionTrace> {
    let predicted = ds
        .windows()
        .iter()
        .map(|w| *w.last().expect("windows are non-empty"))
        .collect();
    trace_from(ds, predicted, scaler, space, tag)
}
