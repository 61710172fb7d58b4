//! Four-term decomposition of the tool-induced gap.
//!
//! Every sample of a checkpoint falls in exactly one of eight cells: its
//! intrinsic domain (tool-free failure or success), whether it called the tool
//! under the tool-available protocol, and whether that answer was correct.
//! The gap `acc_w - acc_wo` equals
//!
//! ```text
//! P(fail, call, correct) + P(fail, no_call, correct)
//!   - P(succ, call, incorrect) - P(succ, no_call, incorrect)
//! ```
//!
//! because samples in the remaining four cells keep their tool-free verdict.

use std::fmt;

use serde::Serialize;

use crate::records::{Protocol, ProtocolSlice};
use crate::{ratio, Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Fail,
    Succ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Call,
    NoCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Fail, Domain::Succ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Fail => "fail",
            Domain::Succ => "succ",
        }
    }
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Call, Action::NoCall];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Call => "call",
            Action::NoCall => "no_call",
        }
    }
}

impl Verdict {
    pub const ALL: [Verdict; 2] = [Verdict::Correct, Verdict::Incorrect];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
        }
    }
}

/// One of the eight (domain, action, verdict) cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Cell {
    pub domain: Domain,
    pub action: Action,
    pub verdict: Verdict,
}

impl Cell {
    pub const fn new(domain: Domain, action: Action, verdict: Verdict) -> Self {
        Cell {
            domain,
            action,
            verdict,
        }
    }

    pub const CALL_GAIN: Cell = Cell::new(Domain::Fail, Action::Call, Verdict::Correct);
    pub const SCHEMA_GAIN: Cell = Cell::new(Domain::Fail, Action::NoCall, Verdict::Correct);
    pub const CALL_HARM: Cell = Cell::new(Domain::Succ, Action::Call, Verdict::Incorrect);
    pub const SCHEMA_HARM: Cell = Cell::new(Domain::Succ, Action::NoCall, Verdict::Incorrect);

    /// All cells in (domain, action, verdict) order.
    pub fn all() -> impl Iterator<Item = Cell> {
        Domain::ALL.into_iter().flat_map(|d| {
            Action::ALL
                .into_iter()
                .flat_map(move |a| Verdict::ALL.into_iter().map(move |v| Cell::new(d, a, v)))
        })
    }

    fn index(self) -> usize {
        (self.domain as usize) * 4 + (self.action as usize) * 2 + self.verdict as usize
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.domain.as_str(),
            self.action.as_str(),
            self.verdict.as_str()
        )
    }
}

/// Cell counts of one checkpoint. `n_total` is always positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionStats {
    n_total: usize,
    counts: [usize; 8],
}

impl PartitionStats {
    /// Builds stats from explicit counts, in [`Cell::all`] order.
    pub fn from_counts(counts: [usize; 8]) -> Result<Self> {
        let n_total = counts.iter().sum();
        if n_total == 0 {
            return Err(Error::EmptyInput(
                "partition stats need at least one sample".into(),
            ));
        }
        Ok(PartitionStats { n_total, counts })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.counts[cell.index()]
    }

    /// Counts in [`Cell::all`] order.
    pub fn counts(&self) -> [usize; 8] {
        self.counts
    }

    pub fn domain_size(&self, domain: Domain) -> usize {
        Action::ALL
            .into_iter()
            .map(|a| self.action_count(domain, a))
            .sum()
    }

    pub fn action_count(&self, domain: Domain, action: Action) -> usize {
        Verdict::ALL
            .into_iter()
            .map(|v| self.count(Cell::new(domain, action, v)))
            .sum()
    }

    /// Number of samples correct under the tool-available protocol.
    pub fn tool_correct(&self) -> usize {
        Cell::all()
            .filter(|c| c.verdict == Verdict::Correct)
            .map(|c| self.count(c))
            .sum()
    }
}

/// Classifies every sample of `slice` into its cell.
pub fn cell_counts(slice: &ProtocolSlice) -> Result<PartitionStats> {
    let tool_free = slice.protocol(Protocol::ToolFree)?;
    let tool = slice.protocol(Protocol::ToolAvailable)?;
    if tool_free.len() != tool.len() {
        return Err(Error::SampleMismatch(slice.key.to_string()));
    }
    let mut counts = [0usize; 8];
    for ((id_wo, wo), (id_w, w)) in tool_free.iter().zip(tool) {
        if id_wo != id_w {
            return Err(Error::SampleMismatch(slice.key.to_string()));
        }
        let cell = Cell::new(
            if wo.correct {
                Domain::Succ
            } else {
                Domain::Fail
            },
            if w.tool_called {
                Action::Call
            } else {
                Action::NoCall
            },
            if w.correct {
                Verdict::Correct
            } else {
                Verdict::Incorrect
            },
        );
        counts[cell.index()] += 1;
    }
    PartitionStats::from_counts(counts).map_err(|_| Error::EmptySlice(slice.key.to_string()))
}

/// Call/schema gain and harm of one checkpoint, as joint cell frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermBreakdown<S> {
    pub call_gain: S,
    pub schema_gain: S,
    pub call_harm: S,
    pub schema_harm: S,
    pub gross_gain: S,
    pub gross_harm: S,
    pub gap_reconstructed: S,
}

impl<S: Scalar> TermBreakdown<S> {
    pub fn from_terms(call_gain: S, schema_gain: S, call_harm: S, schema_harm: S) -> Self {
        TermBreakdown {
            call_gain,
            schema_gain,
            call_harm,
            schema_harm,
            gross_gain: call_gain + schema_gain,
            gross_harm: call_harm + schema_harm,
            gap_reconstructed: call_gain + schema_gain - call_harm - schema_harm,
        }
    }

    /// Terms in call gain, schema gain, call harm, schema harm order.
    pub fn terms(&self) -> [S; 4] {
        [
            self.call_gain,
            self.schema_gain,
            self.call_harm,
            self.schema_harm,
        ]
    }
}

pub fn decompose<S: Scalar>(stats: &PartitionStats) -> TermBreakdown<S> {
    let freq = |c: Cell| ratio::<S>(stats.count(c), stats.n_total);
    TermBreakdown::from_terms(
        freq(Cell::CALL_GAIN),
        freq(Cell::SCHEMA_GAIN),
        freq(Cell::CALL_HARM),
        freq(Cell::SCHEMA_HARM),
    )
}
