//! Writes a freshly initialised model to text, reads it back and predicts one
//! window with both copies.

use prognost::model::{init_params, model_to_string, parse_model, predict};
use prognost::train::TrainConfig;

fn main() -> prognost::Result<()> {
    let cfg = TrainConfig { hidden_dims: vec![3, 2], ..TrainConfig::default() };
    let model = init_params(&cfg, 42)?;
    let text = model_to_string(&model);
    for line in text.lines().take(6) {
        println!("{line}");
    }
    let back = parse_model(&text)?;
    let window = [0.1, 0.2, 0.3, 0.4, 0.5];
    println!("{} parameters", back.parameter_count());
    println!("prediction {} / {}", predict(&model, &window)?, predict(&back, &window)?);
    assert_eq!(text, model_to_string(&back));
    Ok(())
}
