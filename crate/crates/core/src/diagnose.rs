//! Mass / policy / quality factors and failure-cohort call quality.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::explain::{Cell, PartitionStats};
use crate::records::{CheckpointKey, Protocol, ProtocolSlice, RecordSet};
use crate::{ratio, Error, Result, Scalar};

/// Default `n_called` below which a cohort point is flagged low-support.
pub const DEFAULT_LOW_SUPPORT: usize = 10;

/// `P(D)`, `P(a | D)` and `P(o | a, D)` for one cell. Conditionals with an
/// empty conditioning set are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorTriple<S> {
    pub mass: S,
    pub policy: Option<S>,
    pub quality: Option<S>,
}

impl<S: Scalar> FactorTriple<S> {
    /// `mass * policy * quality` when both conditionals are defined.
    pub fn product(&self) -> Option<S> {
        Some(self.mass * self.policy? * self.quality?)
    }
}

pub fn factorize<S: Scalar>(stats: &PartitionStats, cell: Cell) -> FactorTriple<S> {
    let domain = stats.domain_size(cell.domain);
    let acted = stats.action_count(cell.domain, cell.action);
    let hits = stats.count(cell);
    FactorTriple {
        mass: ratio(domain, stats.n_total()),
        policy: (domain > 0).then(|| ratio(acted, domain)),
        quality: (acted > 0).then(|| ratio(hits, acted)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortKind {
    /// Current intrinsic failures `D_fail(t)`.
    Dynamic,
    /// Initial intrinsic failures `D_fail(0)`.
    FixedInitial,
    /// `D_fail(0) ∩ D_fail(t)`.
    Persistent,
}

impl CohortKind {
    pub const ALL: [CohortKind; 3] = [
        CohortKind::Dynamic,
        CohortKind::FixedInitial,
        CohortKind::Persistent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CohortKind::Dynamic => "dynamic",
            CohortKind::FixedInitial => "fixed_initial",
            CohortKind::Persistent => "persistent",
        }
    }
}

impl fmt::Display for CohortKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CohortKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        CohortKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown cohort kind {s:?}"))
    }
}

/// Tool-call accuracy on a failure cohort at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CohortQuality<S> {
    pub cohort_kind: CohortKind,
    pub step: u64,
    pub n_cohort: usize,
    pub n_called: usize,
    pub n_correct: usize,
    /// `P(correct | call, cohort)`; `None` when nobody in the cohort called.
    pub quality: Option<S>,
    pub low_support: bool,
}

impl<S: Scalar> CohortQuality<S> {
    fn from_counts(
        cohort_kind: CohortKind,
        step: u64,
        n_cohort: usize,
        n_called: usize,
        n_correct: usize,
        low_support_threshold: usize,
    ) -> Self {
        CohortQuality {
            cohort_kind,
            step,
            n_cohort,
            n_called,
            n_correct,
            quality: (n_called > 0).then(|| ratio(n_correct, n_called)),
            low_support: n_called < low_support_threshold,
        }
    }

    /// Pools several benchmarks' cohorts by summing their counts.
    pub fn pooled(parts: &[CohortQuality<S>], low_support_threshold: usize) -> Option<Self> {
        let first = parts.first()?;
        let (n_cohort, n_called, n_correct) = parts.iter().fold((0, 0, 0), |acc, p| {
            (acc.0 + p.n_cohort, acc.1 + p.n_called, acc.2 + p.n_correct)
        });
        Some(Self::from_counts(
            first.cohort_kind,
            first.step,
            n_cohort,
            n_called,
            n_correct,
            low_support_threshold,
        ))
    }
}

fn failures(slice: &ProtocolSlice) -> Result<BTreeSet<&str>> {
    Ok(slice
        .protocol(Protocol::ToolFree)?
        .iter()
        .filter(|(_, o)| !o.correct)
        .map(|(id, _)| id.as_str())
        .collect())
}

/// Sample ids of a cohort at `step`.
pub fn cohort_members(
    set: &RecordSet,
    model: &str,
    benchmark: &str,
    kind: CohortKind,
    step: u64,
) -> Result<BTreeSet<String>> {
    let initial = set
        .slice(&CheckpointKey::new(model, benchmark, 0))
        .map_err(|_| Error::MissingInitialStep(format!("{model}/{benchmark}")))?;
    let current = set.slice(&CheckpointKey::new(model, benchmark, step))?;
    let members: BTreeSet<&str> = match kind {
        CohortKind::Dynamic => failures(current)?,
        CohortKind::FixedInitial => failures(initial)?,
        CohortKind::Persistent => {
            let now = failures(current)?;
            failures(initial)?.intersection(&now).copied().collect()
        }
    };
    Ok(members.into_iter().map(str::to_owned).collect())
}

pub fn cohort_quality<S: Scalar>(
    set: &RecordSet,
    model: &str,
    benchmark: &str,
    kind: CohortKind,
    step: u64,
    low_support_threshold: usize,
) -> Result<CohortQuality<S>> {
    let members = cohort_members(set, model, benchmark, kind, step)?;
    let tool = set
        .slice(&CheckpointKey::new(model, benchmark, step))?
        .protocol(Protocol::ToolAvailable)?;
    let (mut n_called, mut n_correct) = (0, 0);
    for id in &members {
        // members that left the sample set at `step` cannot have called
        if let Some(obs) = tool.get(id) {
            if obs.tool_called {
                n_called += 1;
                n_correct += usize::from(obs.correct);
            }
        }
    }
    Ok(CohortQuality::from_counts(
        kind,
        step,
        members.len(),
        n_called,
        n_correct,
        low_support_threshold,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::tests::{fixture_slice, FIXTURE};
    use crate::explain::{cell_counts, decompose, Action, Domain, TermBreakdown, Verdict};
    use crate::records::{accuracy, EvalRecord};
    use crate::Rational;

    #[test]
    fn fixture_call_gain_factors() {
        let stats = cell_counts(&fixture_slice(&FIXTURE)).unwrap();
        let f: FactorTriple<Rational> = factorize(&stats, Cell::CALL_GAIN);
        assert_eq!(f.mass, Rational::new(2, 5));
        assert_eq!(f.policy, Some(Rational::new(1, 2)));
        assert_eq!(f.quality, Some(Rational::new(1, 2)));
        let t: TermBreakdown<Rational> = decompose(&stats);
        assert_eq!(f.product(), Some(t.call_gain));
        assert_eq!(t.call_gain, Rational::new(1, 10));
    }

    #[test]
    fn empty_fail_domain_is_undefined() {
        let stats =
            cell_counts(&fixture_slice(&[(true, true, true), (true, false, true)])).unwrap();
        let f: FactorTriple<f64> = factorize(&stats, Cell::CALL_GAIN);
        assert_eq!(f.mass, 0.0);
        assert_eq!((f.policy, f.quality), (None, None));
        assert_eq!(f.product(), None);
    }

    #[test]
    fn all_succ_call_without_error() {
        let stats = cell_counts(&fixture_slice(&[(true, true, true); 3])).unwrap();
        let f: FactorTriple<f64> = factorize(&stats, Cell::CALL_HARM);
        assert_eq!(f.quality, Some(0.0));
    }

    #[test]
    fn product_identity_and_normalization_on_fixture() {
        let slice = fixture_slice(&FIXTURE);
        let stats = cell_counts(&slice).unwrap();
        for cell in Cell::all() {
            let f: FactorTriple<Rational> = factorize(&stats, cell);
            if let Some(p) = f.product() {
                assert_eq!(p, Rational::new(stats.count(cell) as i128, 10));
            }
        }
        for d in Domain::ALL {
            let sum: Rational = Action::ALL
                .into_iter()
                .map(|a| {
                    factorize::<Rational>(&stats, Cell::new(d, a, Verdict::Correct))
                        .policy
                        .unwrap()
                })
                .sum();
            assert_eq!(sum, Rational::from_integer(1));
        }
        let m =
            |d| factorize::<Rational>(&stats, Cell::new(d, Action::Call, Verdict::Correct)).mass;
        assert_eq!(m(Domain::Fail) + m(Domain::Succ), Rational::from_integer(1));
        assert_eq!(
            m(Domain::Succ),
            accuracy::<Rational>(&slice, Protocol::ToolFree).unwrap()
        );
    }

    /// Samples a..e over two steps.
    fn two_step_set() -> RecordSet {
        // (id, step, tool_free correct, called, tool correct)
        let rows = [
            ("a", 0, false, true, true),
            ("b", 0, false, true, false),
            ("c", 0, false, false, false),
            ("d", 0, true, true, true),
            ("e", 0, true, false, true),
            ("a", 80, true, true, true), // solved tool-free later
            ("b", 80, false, true, true),
            ("c", 80, false, true, false),
            ("d", 80, false, true, true), // newly failing
            ("e", 80, true, false, true),
        ];
        let mut recs = Vec::new();
        for (id, step, wo, called, w) in rows {
            recs.push(EvalRecord::new(
                "m",
                "b",
                step,
                id,
                Protocol::ToolFree,
                wo,
                false,
            ));
            recs.push(EvalRecord::new(
                "m",
                "b",
                step,
                id,
                Protocol::ToolAvailable,
                w,
                called,
            ));
        }
        RecordSet::new(&recs).unwrap()
    }

    #[test]
    fn cohorts_coincide_at_step_zero() {
        let set = two_step_set();
        let d: CohortQuality<f64> =
            cohort_quality(&set, "m", "b", CohortKind::Dynamic, 0, 10).unwrap();
        let f: CohortQuality<f64> =
            cohort_quality(&set, "m", "b", CohortKind::FixedInitial, 0, 10).unwrap();
        assert_eq!(
            (d.n_cohort, d.n_called, d.quality),
            (f.n_cohort, f.n_called, f.quality)
        );
        assert_eq!(d.quality, Some(0.5));
        assert!(d.low_support);
    }

    #[test]
    fn solved_samples_leave_persistent_cohort() {
        let set = two_step_set();
        let members = cohort_members(&set, "m", "b", CohortKind::Persistent, 80).unwrap();
        assert_eq!(members, ["b", "c"].map(String::from).into());
        let fixed = cohort_members(&set, "m", "b", CohortKind::FixedInitial, 80).unwrap();
        assert!(members.is_subset(&fixed));
        let dynamic = cohort_members(&set, "m", "b", CohortKind::Dynamic, 80).unwrap();
        assert_eq!(dynamic, ["b", "c", "d"].map(String::from).into());

        let p: CohortQuality<Rational> =
            cohort_quality(&set, "m", "b", CohortKind::Persistent, 80, 1).unwrap();
        assert_eq!((p.n_cohort, p.n_called, p.n_correct), (2, 2, 1));
        assert!(!p.low_support);
        let f: CohortQuality<Rational> =
            cohort_quality(&set, "m", "b", CohortKind::FixedInitial, 80, 1).unwrap();
        assert_eq!(f.quality, Some(Rational::new(2, 3)));
    }

    #[test]
    fn cohort_requires_step_zero() {
        let recs = vec![EvalRecord::new(
            "m",
            "b",
            5,
            "a",
            Protocol::ToolFree,
            false,
            false,
        )];
        let set = RecordSet::new(&recs).unwrap();
        assert!(matches!(
            cohort_quality::<f64>(&set, "m", "b", CohortKind::Dynamic, 5, 10),
            Err(Error::MissingInitialStep(_))
        ));
    }

    #[test]
    fn pooled_sums_counts() {
        let a = CohortQuality::<f64>::from_counts(CohortKind::Persistent, 80, 10, 4, 1, 10);
        let b = CohortQuality::<f64>::from_counts(CohortKind::Persistent, 80, 20, 6, 4, 10);
        let p = CohortQuality::pooled(&[a, b], 10).unwrap();
        assert_eq!(
            (p.n_cohort, p.n_called, p.quality, p.low_support),
            (30, 10, Some(0.5), false)
        );
    }
}
