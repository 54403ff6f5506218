//! Trains briefly on a degradation series and prints metrics plus the head of
//! the actual-versus-predicted trace in original units.

use prognost::eval::{compute_metrics, metrics_to_csv, split_trace, SplitTag, Space};
use prognost::fixture;
use prognost::preprocess::{prepare_split, remove_outliers};
use prognost::train::{train, TrainConfig};

fn main() -> prognost::Result<()> {
    let (clean, _) = remove_outliers(&fixture::degradation(400, 3), 11, 5.0)?;
    let cfg = TrainConfig { hidden_dims: vec![16, 8], epochs: 20, ..TrainConfig::default() };
    let (split, scaler) = prepare_split(&clean, cfg.window, cfg.train_ratio)?;
    let (model, _) = train(&split, &cfg)?;

    let trace = split_trace(&model, &split, Some(&scaler), Space::Original)?;
    let test = trace.subset(SplitTag::Test);
    let rows = vec![
        ("degradation/train".to_string(), trace.subset(SplitTag::Train).metrics()?),
        ("degradation/test".to_string(), test.metrics()?),
    ];
    print!("{}", metrics_to_csv(&rows));
    let direct = compute_metrics(&test.actual(), &test.predicted())?;
    println!("test mae {:.5}", direct.mae);
    for line in trace.to_csv_string().lines().take(6) {
        println!("{line}");
    }
    Ok(())
}
