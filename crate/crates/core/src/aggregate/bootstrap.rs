//! Paired percentile bootstrap.
//!
//! A resampling unit carries every observation of one sample (all protocols,
//! all checkpoints), so paired statistics are resampled coherently.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AggregationConfig, ConfidenceInterval};
use crate::{Error, Result};

/// How multi-benchmark statistics are resampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// Resample within each benchmark independently.
    PerBenchmark,
    /// Pool all samples and resample the pool as one stratum.
    Pooled,
}

impl BootstrapMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BootstrapMode::PerBenchmark => "per_benchmark",
            BootstrapMode::Pooled => "pooled",
        }
    }
}

impl fmt::Display for BootstrapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Random stream of resample `index`; independent of scheduling.
pub fn resample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Linear-interpolation quantile of sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Percentile interval of `statistic` over resamples of stratified units.
///
/// In [`BootstrapMode::PerBenchmark`] each stratum is resampled to its own
/// size and the statistic receives one resampled group per stratum. In
/// [`BootstrapMode::Pooled`] all units form a single group. Resamples whose
/// statistic is undefined are dropped.
pub fn bootstrap_strata<T, M>(
    strata: &[&[T]],
    statistic: M,
    mode: BootstrapMode,
    config: &AggregationConfig,
) -> Result<ConfidenceInterval>
where
    T: Sync,
    M: Fn(&[Vec<&T>]) -> Option<f64> + Sync,
{
    config.validate()?;
    let groups: Vec<Vec<&T>> = match mode {
        BootstrapMode::PerBenchmark => strata.iter().map(|s| s.iter().collect()).collect(),
        BootstrapMode::Pooled => vec![strata.iter().flat_map(|s| s.iter()).collect()],
    };
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput(
            "bootstrap needs at least one sample per stratum".into(),
        ));
    }
    let point = statistic(&groups).ok_or(Error::UndefinedStatistic)?;

    let mut values: Vec<f64> = (0..config.bootstrap_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = resample_rng(config.rng_seed, r as u64);
            let drawn: Vec<Vec<&T>> = groups
                .iter()
                .map(|g| (0..g.len()).map(|_| g[rng.gen_range(0..g.len())]).collect())
                .collect();
            statistic(&drawn)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if values.is_empty() {
        return Err(Error::UndefinedStatistic);
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - config.ci_level) / 2.0;
    Ok(ConfidenceInterval {
        point,
        lower: percentile(&values, tail),
        upper: percentile(&values, 1.0 - tail),
        level: config.ci_level,
    })
}

/// Percentile interval of a statistic over one set of units.
pub fn bootstrap_ci<T, M>(
    units: &[T],
    statistic: M,
    config: &AggregationConfig,
) -> Result<ConfidenceInterval>
where
    T: Sync,
    M: Fn(&[&T]) -> Option<f64> + Sync,
{
    bootstrap_strata(
        &[units],
        |g| statistic(&g[0]),
        BootstrapMode::PerBenchmark,
        config,
    )
}
