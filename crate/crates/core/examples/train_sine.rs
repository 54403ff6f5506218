//! Fits a one-layer LSTM to a sine wave and compares it with the persistence
//! baseline on the held-out tail.

use prognost::eval::{one_step_predictions, persistence_trace, SplitTag, Space};
use prognost::fixture;
use prognost::preprocess::prepare_split;
use prognost::train::{train, TrainConfig};

fn main() -> prognost::Result<()> {
    let cfg = TrainConfig { hidden_dims: vec![8], epochs: 500, ..TrainConfig::default() };
    let (split, _) = prepare_split(&fixture::sine(200), cfg.window, cfg.train_ratio)?;
    let (model, report) = train(&split, &cfg)?;
    for rec in report.epochs.iter().step_by(100) {
        println!("epoch {:3} loss {:.3e} test rmse {:.4}", rec.epoch, rec.train_loss, rec.test_rmse);
    }
    let lstm = one_step_predictions(&model, &split.test, None, Space::Scaled, SplitTag::Test)?.metrics()?;
    let naive = persistence_trace(&split.test, None, Space::Scaled, SplitTag::Test)?.metrics()?;
    println!("lstm rmse {:.4}, persistence rmse {:.4}", lstm.rmse, naive.rmse);
    Ok(())
}
