//! Cleans a synthetic degradation series, scales it on the training span and
//! cuts it into five-step windows.

use prognost::fixture;
use prognost::preprocess::{prepare_split, remove_outliers, DEFAULT_OUTLIER_K, DEFAULT_OUTLIER_WINDOW};

fn main() -> prognost::Result<()> {
    let raw = fixture::degradation(300, 1);
    let (clean, replaced) = remove_outliers(&raw, DEFAULT_OUTLIER_WINDOW, DEFAULT_OUTLIER_K)?;
    println!("replaced {} outliers at {:?}", replaced.len(), replaced);

    let (split, scaler) = prepare_split(&clean, 5, 0.7)?;
    println!("scaler min {} max {}", scaler.min(), scaler.max());
    println!("{} train windows, {} test windows", split.train.len(), split.test.len());
    let first = &split.train.windows()[0];
    println!("first window {:?} -> {}", first, split.train.targets()[0]);
    Ok(())
}
