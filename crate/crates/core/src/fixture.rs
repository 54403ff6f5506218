//! Deterministic synthetic series for examples and tests.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::SnapshotSeries;

/// Period, in samples, of the sine fixture.
pub const SINE_PERIOD: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// Noiseless `sin(2π i / 40)`.
    Sine,
    /// Flat noisy baseline, then a slow rise and an accelerating run to
    /// failure, with a few isolated sensor spikes.
    Degradation,
}

impl std::str::FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(FixtureKind::Sine),
            "degradation" => Ok(FixtureKind::Degradation),
            other => Err(Error::Config(format!("unknown fixture kind {other:?} (expected sine or degradation)"))),
        }
    }
}

pub fn sine(n: usize) -> SnapshotSeries {
    let values: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / SINE_PERIOD).sin())
        .collect();
    SnapshotSeries::from_values(&values, "fixture:sine")
}

pub fn degradation(n: usize, seed: u64) -> SnapshotSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let onset = 0.6 * n as f64;
    let failure = 0.85 * n as f64;
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64;
            let noise = 0.004 * (unit() - 0.5);
            let drift = if t > onset { 0.03 * (t - onset) / (n as f64 - onset) } else { 0.0 };
            let wear = if t > failure { 0.06 * (((t - failure) / (n as f64 - failure)) * 3.0).exp_m1() } else { 0.0 };
            let spike = if i > 0 && i % 97 == 0 { 0.2 } else { 0.0 };
            0.08 + noise + drift + wear + spike
        })
        .collect();
    SnapshotSeries::from_values(&values, "fixture:degradation")
}

pub fn generate(kind: FixtureKind, n: usize, seed: u64) -> Result<SnapshotSeries> {
    if n == 0 {
        return Err(Error::Config("fixture length must be positive".into()));
    }
    Ok(match kind {
        FixtureKind::Sine => sine(n),
        FixtureKind::Degradation => degradation(n, seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_has_period_forty() {
        let s = sine(81).values();
        assert!(s[0].abs() < 1e-15 && (s[10] - 1.0).abs() < 1e-15);
        assert!((s[40] - s[0]).abs() < 1e-12 && (s[80] - s[0]).abs() < 1e-12);
    }

    #[test]
    fn degradation_rises_and_is_deterministic() {
        let a = degradation(400, 3).values();
        let b = degradation(400, 3).values();
        assert_eq!(a, b);
        let head: f64 = a[..100].iter().sum::<f64>() / 100.0;
        let tail: f64 = a[380..].iter().sum::<f64>() / 20.0;
        assert!(tail > 2.0 * head);
    }
}
