//! Compares backpropagated gradients with central differences for both loss
//! modes.

use prognost::model::LossMode;
use prognost::train::{grad_check, GradCheckConfig};

fn main() -> prognost::Result<()> {
    for mode in [LossMode::Mse, LossMode::Bce] {
        let report = grad_check(&GradCheckConfig { loss_mode: mode, ..GradCheckConfig::default() })?;
        for b in &report.blocks {
            println!(
                "{} {:10} rel {:.2e} abs {:.2e}",
                mode.as_str(),
                b.block,
                b.max_rel_error,
                b.max_abs_error
            );
        }
    }
    Ok(())
}
