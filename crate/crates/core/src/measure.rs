//! Drift curves, the tool-induced gap, schema interference and area metrics.

use crate::records::{accuracy, CheckpointKey, Protocol, ProtocolSlice, RecordSet};
use crate::{Error, Result, Scalar};

/// Accuracy curves of one (model, benchmark) over its checkpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSeries<S> {
    pub model: String,
    pub benchmark: String,
    /// Strictly increasing; the first entry is the initial checkpoint.
    pub steps: Vec<u64>,
    pub acc_wo: Vec<S>,
    pub acc_w: Vec<S>,
    /// Tool-free accuracy relative to the first checkpoint.
    pub f_wo: Vec<S>,
    /// Tool-available accuracy relative to the first checkpoint.
    pub f_w: Vec<S>,
    /// `acc_w - acc_wo` at each checkpoint.
    pub gap: Vec<S>,
    /// `gap - gap[0]`.
    pub delta_tool: Vec<S>,
}

impl<S: Scalar> DriftSeries<S> {
    /// Builds the derived curves from the two accuracy curves.
    pub fn from_accuracies(
        model: impl Into<String>,
        benchmark: impl Into<String>,
        steps: Vec<u64>,
        acc_wo: Vec<S>,
        acc_w: Vec<S>,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::EmptyInput(
                "drift series needs at least one step".into(),
            ));
        }
        check_len("acc_wo", steps.len(), acc_wo.len())?;
        check_len("acc_w", steps.len(), acc_w.len())?;
        check_increasing(&steps)?;

        let f_wo: Vec<S> = acc_wo.iter().map(|&a| a - acc_wo[0]).collect();
        let f_w: Vec<S> = acc_w.iter().map(|&a| a - acc_w[0]).collect();
        let gap: Vec<S> = acc_w.iter().zip(&acc_wo).map(|(&w, &wo)| w - wo).collect();
        let delta_tool = gap.iter().map(|&g| g - gap[0]).collect();
        Ok(DriftSeries {
            model: model.into(),
            benchmark: benchmark.into(),
            steps,
            acc_wo,
            acc_w,
            f_wo,
            f_w,
            gap,
            delta_tool,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step values converted to the scalar type.
    pub fn times(&self) -> Vec<S> {
        self.steps.iter().map(|&s| S::from_step(s)).collect()
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch {
            what: what.into(),
            expected,
            got,
        });
    }
    Ok(())
}

fn check_increasing(steps: &[u64]) -> Result<()> {
    match steps.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(Error::NonMonotone(i + 1)),
        None => Ok(()),
    }
}

/// Drift series of `model` on `benchmark` over every checkpoint in the set.
///
/// Requires step 0 and both tool-free and tool-available records at every step.
pub fn drift_series<S: Scalar>(
    set: &RecordSet,
    model: &str,
    benchmark: &str,
) -> Result<DriftSeries<S>> {
    let steps = set.steps(model, benchmark);
    if steps.first() != Some(&0) {
        return Err(Error::MissingInitialStep(format!("{model}/{benchmark}")));
    }
    let mut acc_wo = Vec::with_capacity(steps.len());
    let mut acc_w = Vec::with_capacity(steps.len());
    for &step in &steps {
        let slice = set.slice(&CheckpointKey::new(model, benchmark, step))?;
        acc_wo.push(accuracy(slice, Protocol::ToolFree)?);
        acc_w.push(accuracy(slice, Protocol::ToolAvailable)?);
    }
    DriftSeries::from_accuracies(model, benchmark, steps, acc_wo, acc_w)
}

/// Composite trapezoid rule over `(t, v)` points.
pub fn trapezoid<S: Scalar>(points: &[(S, S)]) -> Result<S> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: points.len(),
        });
    }
    let two = S::one() + S::one();
    let mut total = S::zero();
    for (i, w) in points.windows(2).enumerate() {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        if t1 <= t0 {
            return Err(Error::NonMonotone(i + 1));
        }
        total = total + (t1 - t0) * (v0 + v1) / two;
    }
    Ok(total)
}

/// Inserts the linear-interpolation zero crossing into every segment whose
/// endpoints have strictly opposite signs.
pub fn with_zero_crossings<S: Scalar>(times: &[S], values: &[S]) -> Vec<(S, S)> {
    let mut out = Vec::with_capacity(times.len() * 2);
    for i in 0..times.len() {
        if i > 0 {
            let (t0, v0, t1, v1) = (times[i - 1], values[i - 1], times[i], values[i]);
            let opposite = (v0 > S::zero() && v1 < S::zero()) || (v0 < S::zero() && v1 > S::zero());
            if opposite {
                let t = t0 + (t1 - t0) * v0 / (v0 - v1);
                if t > t0 && t < t1 {
                    out.push((t, S::zero()));
                }
            }
        }
        out.push((times[i], values[i]));
    }
    out
}

/// Integrals of the positive part and of the magnitude of the negative part
/// of the piecewise-linear curve through `(times, values)`.
pub fn signed_areas<S: Scalar>(times: &[S], values: &[S]) -> Result<(S, S)> {
    check_len("values", times.len(), values.len())?;
    let refined = with_zero_crossings(times, values);
    let pos: Vec<(S, S)> = refined
        .iter()
        .map(|&(t, v)| (t, v.max_of(S::zero())))
        .collect();
    let neg: Vec<(S, S)> = refined
        .iter()
        .map(|&(t, v)| (t, (-v).max_of(S::zero())))
        .collect();
    Ok((trapezoid(&pos)?, trapezoid(&neg)?))
}

/// Integral of `|v|` along the piecewise-linear curve.
pub fn abs_area<S: Scalar>(times: &[S], values: &[S]) -> Result<S> {
    let (p, n) = signed_areas(times, values)?;
    Ok(p + n)
}

/// Cumulative drift magnitudes and the tool contribution ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaSummary<S> {
    /// Integral of `|f_wo|`.
    pub b_wo: S,
    /// Integral of `max(0, f_w - f_wo)`.
    pub b_tool_pos: S,
    /// Magnitude of the integral of `min(0, f_w - f_wo)`.
    pub b_tool_neg: S,
    /// `(pos + neg) / (b_wo + pos + neg)`; `None` when every area is zero.
    pub s_tool: Option<S>,
}

impl<S: Scalar> AreaSummary<S> {
    pub fn from_curves(times: &[S], f_wo: &[S], f_w: &[S]) -> Result<Self> {
        check_len("f_wo", times.len(), f_wo.len())?;
        check_len("f_w", times.len(), f_w.len())?;
        let b_wo = abs_area(times, f_wo)?;
        let diff: Vec<S> = f_w.iter().zip(f_wo).map(|(&w, &wo)| w - wo).collect();
        let (b_tool_pos, b_tool_neg) = signed_areas(times, &diff)?;
        let tool = b_tool_pos + b_tool_neg;
        let denom = b_wo + tool;
        let s_tool = (denom > S::zero()).then(|| tool / denom);
        Ok(AreaSummary {
            b_wo,
            b_tool_pos,
            b_tool_neg,
            s_tool,
        })
    }
}

/// Area summary of a series, integrated over its raw drift curves.
pub fn area_summary<S: Scalar>(series: &DriftSeries<S>) -> Result<AreaSummary<S>> {
    if series.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: series.len(),
        });
    }
    AreaSummary::from_curves(&series.times(), &series.f_wo, &series.f_w)
}

/// Accuracy cost of exposing the tool schema while forbidding execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemaGap<S> {
    pub acc_wo: S,
    pub acc_schema: S,
    pub acc_w: Option<S>,
    /// `acc_schema - acc_wo`.
    pub gap: S,
}

impl<S: Scalar> SchemaGap<S> {
    pub fn from_accuracies(acc_wo: S, acc_schema: S, acc_w: Option<S>) -> Self {
        SchemaGap {
            acc_wo,
            acc_schema,
            acc_w,
            gap: acc_schema - acc_wo,
        }
    }
}

pub fn schema_gap<S: Scalar>(slice: &ProtocolSlice) -> Result<SchemaGap<S>> {
    let acc_schema = accuracy(slice, Protocol::SchemaOnly)?;
    let acc_wo = accuracy(slice, Protocol::ToolFree)?;
    let acc_w = if slice.has(Protocol::ToolAvailable) {
        Some(accuracy(slice, Protocol::ToolAvailable)?)
    } else {
        None
    };
    Ok(SchemaGap::from_accuracies(acc_wo, acc_schema, acc_w))
}
