//! Stacked-LSTM forecasting of bearing vibration trends for fault prognostics.
//!
//! The pipeline runs in stages that each exchange plain files:
//!
//! 1. [`ingest`] turns IMS snapshot directories or CSV columns into a
//!    [`ingest::SnapshotSeries`].
//! 2. [`preprocess`] removes outliers, fills short gaps, min-max scales,
//!    windows and chronologically splits the series.
//! 3. [`model`] holds the stacked LSTM with its linear regression head.
//! 4. [`train`] computes losses, BPTT gradients and Adam updates.
//! 5. [`eval`] produces RMSE/MAE/NMAE/MAPE and one-step-ahead traces.
//!
//! [`cli`] wires the stages together behind the `prognost` binary, and
//! [`fixture`] generates deterministic synthetic series for testing.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::OnceLock;

pub mod cli;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod ingest;
pub mod matrix;
pub mod model;
pub mod preprocess;
pub mod train;

pub use error::{Error, ErrorClass, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PROGNOST_THREADS";

/// Worker count: `PROGNOST_THREADS` when set to a positive integer, else the
/// hardware parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

pub(crate) fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count())
            .build()
            .expect("failed to build worker pool")
    })
}
