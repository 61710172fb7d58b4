//! Synthetic record sets driven by mass / policy / quality trajectories, with
//! closed-form expectations for every estimator in the pipeline.
//!
//! Generative model, per sample `i` and checkpoint `k`:
//!
//! * step 0: intrinsic failure with probability `mass_fail[0]`;
//! * step `k > 0`: an initial failure is still failing with probability
//!   `rho_k`, an initial success fails with probability `lambda_k`, where
//!   `rho_k` is `persistence` clipped to the range that keeps the marginal
//!   failure rate equal to `mass_fail[k]`;
//! * tool-available action and verdict are drawn from the cell parameters of
//!   the realized domain, independently across samples and steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnose::{CohortKind, FactorTriple};
use crate::explain::{Action, Cell, Domain, TermBreakdown, Verdict};
use crate::measure::{AreaSummary, DriftSeries};
use crate::records::{EvalRecord, Protocol};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_benchmark")]
    pub benchmark: String,
    pub n_samples: usize,
    pub steps: Vec<u64>,
    pub mass_fail: Vec<f64>,
    pub policy_call_fail: Vec<f64>,
    pub policy_call_succ: Vec<f64>,
    pub quality_gain_call: Vec<f64>,
    pub quality_gain_nocall: Vec<f64>,
    pub quality_harm_call: Vec<f64>,
    pub quality_harm_nocall: Vec<f64>,
    pub persistence: f64,
    /// Flat schema-only accuracy; no schema-only records when absent.
    #[serde(default)]
    pub schema_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_model() -> String {
    "synth".into()
}

fn default_benchmark() -> String {
    "synth-bench".into()
}

/// Per-step parameters of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub mass_fail: f64,
    pub policy_call_fail: f64,
    pub policy_call_succ: f64,
    pub quality_gain_call: f64,
    pub quality_gain_nocall: f64,
    pub quality_harm_call: f64,
    pub quality_harm_nocall: f64,
}

impl SynthSpec {
    /// A spec whose parameters are the same at every step.
    pub fn constant(
        n_samples: usize,
        steps: Vec<u64>,
        params: StepParams,
        persistence: f64,
        seed: u64,
    ) -> Self {
        let k = steps.len();
        SynthSpec {
            model: default_model(),
            benchmark: default_benchmark(),
            n_samples,
            steps,
            mass_fail: vec![params.mass_fail; k],
            policy_call_fail: vec![params.policy_call_fail; k],
            policy_call_succ: vec![params.policy_call_succ; k],
            quality_gain_call: vec![params.quality_gain_call; k],
            quality_gain_nocall: vec![params.quality_gain_nocall; k],
            quality_harm_call: vec![params.quality_harm_call; k],
            quality_harm_nocall: vec![params.quality_harm_nocall; k],
            persistence,
            schema_accuracy: None,
            seed,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    fn series(&self) -> [(&'static str, &Vec<f64>); 7] {
        [
            ("mass_fail", &self.mass_fail),
            ("policy_call_fail", &self.policy_call_fail),
            ("policy_call_succ", &self.policy_call_succ),
            ("quality_gain_call", &self.quality_gain_call),
            ("quality_gain_nocall", &self.quality_gain_nocall),
            ("quality_harm_call", &self.quality_harm_call),
            ("quality_harm_nocall", &self.quality_harm_nocall),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.steps.first() != Some(&0) {
            return bad("steps must start at 0".into());
        }
        if self.steps.windows(2).any(|w| w[1] <= w[0]) {
            return bad("steps must be strictly increasing".into());
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        for (name, values) in self.series() {
            if values.len() != self.steps.len() {
                return Err(Error::LengthMismatch {
                    what: name.into(),
                    expected: self.steps.len(),
                    got: values.len(),
                });
            }
            if let Some(v) = values.iter().find(|v| !unit(**v)) {
                return bad(format!("{name} contains {v}, outside [0, 1]"));
            }
        }
        if !unit(self.persistence) {
            return bad(format!("persistence = {} outside [0, 1]", self.persistence));
        }
        if let Some(a) = self.schema_accuracy.filter(|a| !unit(*a)) {
            return bad(format!("schema_accuracy = {a} outside [0, 1]"));
        }
        Ok(())
    }

    pub fn params(&self, k: usize) -> StepParams {
        StepParams {
            mass_fail: self.mass_fail[k],
            policy_call_fail: self.policy_call_fail[k],
            policy_call_succ: self.policy_call_succ[k],
            quality_gain_call: self.quality_gain_call[k],
            quality_gain_nocall: self.quality_gain_nocall[k],
            quality_harm_call: self.quality_harm_call[k],
            quality_harm_nocall: self.quality_harm_nocall[k],
        }
    }

    /// `(rho, lambda)` at step index `k`: failure probability for initial
    /// failures and for initial successes respectively.
    pub fn transition(&self, k: usize) -> (f64, f64) {
        let m0 = self.mass_fail[0];
        let m = self.mass_fail[k];
        if k == 0 {
            return (1.0, 0.0);
        }
        if m0 <= 0.0 {
            return (self.persistence, m);
        }
        if m0 >= 1.0 {
            return (m, 0.0);
        }
        let lo = ((m - (1.0 - m0)) / m0).max(0.0);
        let hi = (m / m0).min(1.0);
        let rho = self.persistence.clamp(lo, hi);
        let lambda = ((m - m0 * rho) / (1.0 - m0)).clamp(0.0, 1.0);
        (rho, lambda)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn cell_rng(seed: u64, sample: usize, step_index: usize) -> ChaCha8Rng {
    let s = splitmix(seed ^ splitmix(sample as u64 ^ splitmix(step_index as u64)));
    ChaCha8Rng::seed_from_u64(s)
}

/// Draws the record set described by `spec`. Records are ordered by step,
/// then sample, then protocol.
pub fn generate(spec: &SynthSpec) -> Result<Vec<EvalRecord>> {
    spec.validate()?;
    let n = spec.n_samples;
    let width = n.to_string().len().max(4);
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:0width$}")).collect();
    let per_step = 2 + usize::from(spec.schema_accuracy.is_some());
    let mut out = Vec::with_capacity(n * spec.steps.len() * per_step);

    let mut initial_fail = vec![false; n];
    for (k, &step) in spec.steps.iter().enumerate() {
        let p = spec.params(k);
        let (rho, lambda) = spec.transition(k);
        for (i, id) in ids.iter().enumerate() {
            let mut rng = cell_rng(spec.seed, i, k);
            let fail = if k == 0 {
                let f = rng.gen_bool(p.mass_fail);
                initial_fail[i] = f;
                f
            } else {
                rng.gen_bool(if initial_fail[i] { rho } else { lambda })
            };
            let (call, correct) = if fail {
                let call = rng.gen_bool(p.policy_call_fail);
                let q = if call {
                    p.quality_gain_call
                } else {
                    p.quality_gain_nocall
                };
                (call, rng.gen_bool(q))
            } else {
                let call = rng.gen_bool(p.policy_call_succ);
                let q = if call {
                    p.quality_harm_call
                } else {
                    p.quality_harm_nocall
                };
                (call, !rng.gen_bool(q))
            };
            let make = |protocol, correct, called| {
                EvalRecord::new(
                    &spec.model,
                    &spec.benchmark,
                    step,
                    id,
                    protocol,
                    correct,
                    called,
                )
            };
            out.push(make(Protocol::ToolFree, !fail, false));
            out.push(make(Protocol::ToolAvailable, correct, call));
            if let Some(a) = spec.schema_accuracy {
                out.push(make(Protocol::SchemaOnly, rng.gen_bool(a), false));
            }
        }
    }
    Ok(out)
}

/// Closed-form expectations at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedStep {
    pub step: u64,
    pub acc_wo: f64,
    pub acc_w: f64,
    pub gap: f64,
    pub terms: TermBreakdown<f64>,
    /// `(rho, lambda)` as used by the generator.
    pub transition: (f64, f64),
    params: StepParams,
}

impl ExpectedStep {
    /// Generating factors of `cell`.
    pub fn factor(&self, cell: Cell) -> FactorTriple<f64> {
        let p = &self.params;
        let (mass, call) = match cell.domain {
            Domain::Fail => (p.mass_fail, p.policy_call_fail),
            Domain::Succ => (1.0 - p.mass_fail, p.policy_call_succ),
        };
        let policy = match cell.action {
            Action::Call => call,
            Action::NoCall => 1.0 - call,
        };
        let hit = match (cell.domain, cell.action) {
            (Domain::Fail, Action::Call) => p.quality_gain_call,
            (Domain::Fail, Action::NoCall) => p.quality_gain_nocall,
            (Domain::Succ, Action::Call) => 1.0 - p.quality_harm_call,
            (Domain::Succ, Action::NoCall) => 1.0 - p.quality_harm_nocall,
        };
        let quality = match cell.verdict {
            Verdict::Correct => hit,
            Verdict::Incorrect => 1.0 - hit,
        };
        FactorTriple {
            mass,
            policy: Some(policy),
            quality: Some(quality),
        }
    }

    /// Expected call accuracy on a failure cohort. For the fixed initial
    /// cohort this is the ratio of expected counts.
    pub fn cohort_quality(&self, kind: CohortKind) -> Option<f64> {
        let p = &self.params;
        match kind {
            CohortKind::Dynamic | CohortKind::Persistent => Some(p.quality_gain_call),
            CohortKind::FixedInitial => {
                let rho = self.transition.0;
                let still = rho * p.policy_call_fail;
                let recovered = (1.0 - rho) * p.policy_call_succ;
                let den = still + recovered;
                (den > 0.0).then(|| {
                    (still * p.quality_gain_call + recovered * (1.0 - p.quality_harm_call)) / den
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedMetrics {
    pub steps: Vec<ExpectedStep>,
    pub drift: DriftSeries<f64>,
    /// Exact piecewise-linear areas of the expected curves (two or more steps).
    pub area: Option<AreaSummary<f64>>,
}

pub fn expected_metrics(spec: &SynthSpec) -> Result<ExpectedMetrics> {
    spec.validate()?;
    let steps: Vec<ExpectedStep> = spec
        .steps
        .iter()
        .enumerate()
        .map(|(k, &step)| {
            let p = spec.params(k);
            let m = p.mass_fail;
            let terms = TermBreakdown::from_terms(
                m * p.policy_call_fail * p.quality_gain_call,
                m * (1.0 - p.policy_call_fail) * p.quality_gain_nocall,
                (1.0 - m) * p.policy_call_succ * p.quality_harm_call,
                (1.0 - m) * (1.0 - p.policy_call_succ) * p.quality_harm_nocall,
            );
            let acc_wo = 1.0 - m;
            ExpectedStep {
                step,
                acc_wo,
                acc_w: acc_wo + terms.gap_reconstructed,
                gap: terms.gap_reconstructed,
                terms,
                transition: spec.transition(k),
                params: p,
            }
        })
        .collect();
    let drift = DriftSeries::from_accuracies(
        &spec.model,
        &spec.benchmark,
        spec.steps.clone(),
        steps.iter().map(|s| s.acc_wo).collect(),
        steps.iter().map(|s| s.acc_w).collect(),
    )?;
    let area = if drift.len() >= 2 {
        Some(crate::measure::area_summary(&drift)?)
    } else {
        None
    };
    Ok(ExpectedMetrics { steps, drift, area })
}
