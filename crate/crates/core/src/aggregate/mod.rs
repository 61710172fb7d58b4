//! Cross-benchmark aggregation, smoothing and bootstrap confidence intervals.

mod bootstrap;

pub use bootstrap::{bootstrap_ci, bootstrap_strata, percentile, resample_rng, BootstrapMode};

use serde::{Deserialize, Serialize};

use crate::{Error, FloatScalar, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// Smoothing factor in `[0, 1)` for a step of `smoothing_ref_interval`.
    pub smoothing_alpha: f64,
    pub smoothing_ref_interval: f64,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub rng_seed: u64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            smoothing_alpha: 0.6,
            smoothing_ref_interval: 80.0,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            rng_seed: 0,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.smoothing_alpha) {
            return Err(Error::InvalidParameter(format!(
                "smoothing_alpha = {} not in [0, 1)",
                self.smoothing_alpha
            )));
        }
        if !(self.smoothing_ref_interval > 0.0 && self.smoothing_ref_interval.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smoothing_ref_interval = {} must be positive",
                self.smoothing_ref_interval
            )));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::InvalidParameter(
                "bootstrap_resamples must be positive".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ci_level = {} not in (0, 1)",
                self.ci_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Values of one metric over a checkpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve<S> {
    pub steps: Vec<u64>,
    pub values: Vec<S>,
}

impl<S: Scalar> Curve<S> {
    pub fn new(steps: Vec<u64>, values: Vec<S>) -> Result<Self> {
        if steps.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "curve values".into(),
                expected: steps.len(),
                got: values.len(),
            });
        }
        Ok(Curve { steps, values })
    }
}

/// Result of dividing drift curves by their largest magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<S> {
    pub values: Vec<S>,
    /// `None` when every input value was zero; the output is then all zeros.
    pub divisor: Option<S>,
}

fn max_abs<S: Scalar>(values: impl IntoIterator<Item = S>) -> S {
    values.into_iter().fold(S::zero(), |m, v| m.max_of(v.abs()))
}

fn divide<S: Scalar>(values: &[S], divisor: Option<S>) -> Vec<S> {
    match divisor {
        Some(d) => values.iter().map(|&v| v / d).collect(),
        None => vec![S::zero(); values.len()],
    }
}

/// Divides a drift curve by its maximum absolute value.
pub fn normalize_drift<S: Scalar>(values: &[S]) -> Normalized<S> {
    let m = max_abs(values.iter().copied());
    let divisor = (m > S::zero()).then_some(m);
    Normalized {
        values: divide(values, divisor),
        divisor,
    }
}

/// Normalizes a benchmark's tool-free and tool-available drift curves by one
/// shared divisor, the largest magnitude over both curves.
pub fn normalize_pair<S: Scalar>(f_wo: &[S], f_w: &[S]) -> (Normalized<S>, Normalized<S>) {
    let m = max_abs(f_wo.iter().chain(f_w).copied());
    let divisor = (m > S::zero()).then_some(m);
    (
        Normalized {
            values: divide(f_wo, divisor),
            divisor,
        },
        Normalized {
            values: divide(f_w, divisor),
            divisor,
        },
    )
}

/// Pointwise arithmetic mean of curves sharing one grid.
///
/// Values at each step are summed in ascending order, so the result does not
/// depend on the order of `curves`.
pub fn aggregate_direct<S: Scalar>(curves: &[Curve<S>]) -> Result<Curve<S>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::EmptyInput("no curves to aggregate".into()))?;
    if curves.iter().any(|c| c.steps != first.steps) {
        return Err(Error::GridMismatch);
    }
    let n = S::from_count(curves.len());
    let values = (0..first.steps.len())
        .map(|i| {
            let mut column: Vec<S> = curves.iter().map(|c| c.values[i]).collect();
            column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            column.into_iter().fold(S::zero(), |acc, v| acc + v) / n
        })
        .collect();
    Ok(Curve {
        steps: first.steps.clone(),
        values,
    })
}

/// Mean of per-benchmark `(f_wo, f_w)` drift curves after pairwise
/// normalization. Returns the aggregated `(f_wo, f_w)` curves.
pub fn aggregate_normalized<S: Scalar>(
    pairs: &[(Curve<S>, Curve<S>)],
) -> Result<(Curve<S>, Curve<S>)> {
    let mut wo = Vec::with_capacity(pairs.len());
    let mut w = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        if a.steps != b.steps {
            return Err(Error::GridMismatch);
        }
        let (na, nb) = normalize_pair(&a.values, &b.values);
        wo.push(Curve::new(a.steps.clone(), na.values)?);
        w.push(Curve::new(b.steps.clone(), nb.values)?);
    }
    Ok((aggregate_direct(&wo)?, aggregate_direct(&w)?))
}

/// Time-weighted exponential moving average.
///
/// The factor for a gap of `dt` steps is `alpha^(dt / ref_interval)`; on a
/// uniform grid with spacing `ref_interval` this is a plain EMA.
pub fn ema_smooth<F: FloatScalar>(
    steps: &[u64],
    values: &[F],
    alpha: F,
    ref_interval: F,
) -> Result<Vec<F>> {
    if steps.len() != values.len() {
        return Err(Error::LengthMismatch {
            what: "smoothing values".into(),
            expected: steps.len(),
            got: values.len(),
        });
    }
    if let Some(i) = steps.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotone(i + 1));
    }
    let mut out: Vec<F> = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let next = match out.last() {
            None => v,
            Some(&prev) => {
                let dt = F::from_step(steps[i] - steps[i - 1]);
                let keep = alpha.powf(dt / ref_interval);
                let s = prev + (F::one() - keep) * (v - prev);
                // stay inside [prev, v] despite rounding
                s.max_of(prev.min_of(v)).min_of(prev.max_of(v))
            }
        };
        out.push(next);
    }
    Ok(out)
}
