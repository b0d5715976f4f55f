//! Percentile bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no scores")]
    Empty,
    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    Level(f64),
    #[error("at least one resample is required")]
    NoResamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn mean(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Sample mean with a percentile interval over `resamples` seeded resamples.
///
/// The resampled means are sorted; the bounds are the entries at
/// `floor(a/2 * R)` and `ceil((1 - a/2) * R) - 1` with `a = 1 - level`,
/// widened if needed so that `lo <= mean <= hi`.
pub fn bootstrap_ci(scores: &[f64], resamples: usize, level: f64, seed: u64) -> Result<Interval, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Level(level));
    }
    if resamples == 0 {
        return Err(StatsError::NoResamples);
    }
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| scores[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let r = resamples as f64;
    let lo_idx = ((alpha / 2.0 * r).floor() as usize).min(resamples - 1);
    let hi_idx = (((1.0 - alpha / 2.0) * r).ceil() as usize).clamp(1, resamples) - 1;
    let m = mean(scores);
    Ok(Interval {
        mean: m,
        lo: means[lo_idx].min(m),
        hi: means[hi_idx].max(m),
    })
}
