//! Evaluation record model: wire-format parsing, validation, per-checkpoint
//! protocol slices and the intrinsic-capability partition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{ratio, Error, Result, Scalar};

/// Inference protocol under which a record was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ToolFree,
    ToolAvailable,
    SchemaOnly,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [
        Protocol::ToolFree,
        Protocol::ToolAvailable,
        Protocol::SchemaOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::ToolFree => "tool_free",
            Protocol::ToolAvailable => "tool_available",
            Protocol::SchemaOnly => "schema_only",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("invalid enum value {s:?} for protocol"))
    }
}

/// One observation: a sample evaluated at a checkpoint under a protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub model: String,
    pub benchmark: String,
    pub step: u64,
    pub sample_id: String,
    pub protocol: Protocol,
    pub correct: bool,
    pub tool_called: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_calls: Option<u64>,
    /// Unknown fields from the input line, kept verbatim and otherwise ignored.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl EvalRecord {
    pub fn new(
        model: impl Into<String>,
        benchmark: impl Into<String>,
        step: u64,
        sample_id: impl Into<String>,
        protocol: Protocol,
        correct: bool,
        tool_called: bool,
    ) -> Self {
        EvalRecord {
            model: model.into(),
            benchmark: benchmark.into(),
            step,
            sample_id: sample_id.into(),
            protocol,
            correct,
            tool_called,
            num_calls: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> CheckpointKey {
        CheckpointKey::new(&self.model, &self.benchmark, self.step)
    }

    /// Serializes to a single wire-format line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }

    fn locator(&self, index: usize) -> String {
        format!(
            "record #{index} ({}/{}/step {}/{}/{})",
            self.model, self.benchmark, self.step, self.sample_id, self.protocol
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    NotAnObject,
    MissingField,
    InvalidType,
    InvalidEnum,
    NegativeStep,
    NegativeCount,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::NotAnObject => "not an object",
            ParseErrorKind::MissingField => "missing required field",
            ParseErrorKind::InvalidType => "invalid type",
            ParseErrorKind::InvalidEnum => "invalid enum value",
            ParseErrorKind::NegativeStep => "negative step",
            ParseErrorKind::NegativeCount => "negative count",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// 1-based line number within the parsed text.
    pub line: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.kind, self.message)
    }
}

/// Parses line-delimited records. Blank lines are skipped. Every line is
/// attempted; if any line fails, all failures are returned together.
pub fn parse_records(text: &str) -> std::result::Result<Vec<EvalRecord>, Vec<ParseError>> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(r) => records.push(r),
            Err((kind, message)) => errors.push(ParseError {
                line: idx + 1,
                kind,
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(errors)
    }
}

type LineError = (ParseErrorKind, String);

/// Parses a single wire-format line.
pub fn parse_line(line: &str) -> std::result::Result<EvalRecord, LineError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| (ParseErrorKind::Syntax, e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err((ParseErrorKind::NotAnObject, "expected a JSON object".into()));
    };

    let model = take_string(&mut obj, "model")?;
    let benchmark = take_string(&mut obj, "benchmark")?;
    let step = match take(&mut obj, "step")? {
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(s), _) => s,
            (None, Some(_)) => {
                return Err((ParseErrorKind::NegativeStep, format!("step = {n}")));
            }
            _ => {
                return Err(type_error(
                    "step",
                    "a non-negative integer",
                    &Value::Number(n),
                ))
            }
        },
        other => return Err(type_error("step", "a non-negative integer", &other)),
    };
    let sample_id = take_string(&mut obj, "sample_id")?;
    let protocol = take_string(&mut obj, "protocol")?
        .parse::<Protocol>()
        .map_err(|m| (ParseErrorKind::InvalidEnum, m))?;
    let correct = take_bool(&mut obj, "correct")?;
    let tool_called = take_bool(&mut obj, "tool_called")?;
    let num_calls = match obj.remove("num_calls") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => match (n.as_u64(), n.as_i64()) {
            (Some(c), _) => Some(c),
            (None, Some(_)) => {
                return Err((ParseErrorKind::NegativeCount, format!("num_calls = {n}")));
            }
            _ => {
                return Err(type_error(
                    "num_calls",
                    "a non-negative integer",
                    &Value::Number(n),
                ))
            }
        },
        Some(other) => return Err(type_error("num_calls", "a non-negative integer", &other)),
    };

    Ok(EvalRecord {
        model,
        benchmark,
        step,
        sample_id,
        protocol,
        correct,
        tool_called,
        num_calls,
        extra: obj.into_iter().collect(),
    })
}

fn take(obj: &mut Map<String, Value>, field: &str) -> std::result::Result<Value, LineError> {
    obj.remove(field)
        .ok_or_else(|| (ParseErrorKind::MissingField, format!("field {field:?}")))
}

fn take_string(
    obj: &mut Map<String, Value>,
    field: &str,
) -> std::result::Result<String, LineError> {
    match take(obj, field)? {
        Value::String(s) => Ok(s),
        other => Err(type_error(field, "a string", &other)),
    }
}

fn take_bool(obj: &mut Map<String, Value>, field: &str) -> std::result::Result<bool, LineError> {
    match take(obj, field)? {
        Value::Bool(b) => Ok(b),
        other => Err(type_error(field, "true or false", &other)),
    }
}

fn type_error(field: &str, expected: &str, got: &Value) -> LineError {
    (
        ParseErrorKind::InvalidType,
        format!("field {field:?} must be {expected}, got {got}"),
    )
}

/// Identifies one checkpoint of one model on one benchmark.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CheckpointKey {
    pub model: String,
    pub benchmark: String,
    pub step: u64,
}

impl CheckpointKey {
    pub fn new(model: impl Into<String>, benchmark: impl Into<String>, step: u64) -> Self {
        CheckpointKey {
            model: model.into(),
            benchmark: benchmark.into(),
            step,
        }
    }
}

impl fmt::Display for CheckpointKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/step {}", self.model, self.benchmark, self.step)
    }
}

/// Correctness and tool usage of one sample under one protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    pub correct: bool,
    pub tool_called: bool,
}

/// All records of one checkpoint, indexed by protocol then sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSlice {
    pub key: CheckpointKey,
    /// Tool-free sample ids in sorted order.
    pub samples: Vec<String>,
    pub by_protocol: BTreeMap<Protocol, BTreeMap<String, Observation>>,
}

impl ProtocolSlice {
    pub fn has(&self, protocol: Protocol) -> bool {
        self.by_protocol.contains_key(&protocol)
    }

    pub fn protocol(&self, protocol: Protocol) -> Result<&BTreeMap<String, Observation>> {
        self.by_protocol
            .get(&protocol)
            .ok_or_else(|| Error::ProtocolAbsent(protocol, self.key.to_string()))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of correct answers under `protocol`.
    pub fn correct_count(&self, protocol: Protocol) -> Result<usize> {
        Ok(self
            .protocol(protocol)?
            .values()
            .filter(|o| o.correct)
            .count())
    }
}

/// Split of a checkpoint's samples by tool-free correctness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub fail_set: BTreeSet<String>,
    pub succ_set: BTreeSet<String>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.fail_set.len() + self.succ_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the slice for `key` from a record list.
///
/// The records are assumed to have passed [`validate`].
pub fn slice(records: &[EvalRecord], key: &CheckpointKey) -> Result<ProtocolSlice> {
    let mut by_protocol: BTreeMap<Protocol, BTreeMap<String, Observation>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.step == key.step && r.model == key.model && r.benchmark == key.benchmark)
    {
        by_protocol.entry(r.protocol).or_default().insert(
            r.sample_id.clone(),
            Observation {
                correct: r.correct,
                tool_called: r.tool_called,
            },
        );
    }
    finish_slice(key.clone(), by_protocol)
}

fn finish_slice(
    key: CheckpointKey,
    by_protocol: BTreeMap<Protocol, BTreeMap<String, Observation>>,
) -> Result<ProtocolSlice> {
    let Some(tool_free) = by_protocol.get(&Protocol::ToolFree) else {
        return Err(Error::KeyAbsent(key.to_string()));
    };
    let samples = tool_free.keys().cloned().collect();
    Ok(ProtocolSlice {
        key,
        samples,
        by_protocol,
    })
}

/// Partitions a slice into intrinsic failures and successes.
pub fn partition(slice: &ProtocolSlice) -> Result<Partition> {
    if slice.is_empty() {
        return Err(Error::EmptySlice(slice.key.to_string()));
    }
    let mut fail_set = BTreeSet::new();
    let mut succ_set = BTreeSet::new();
    for (id, obs) in slice.protocol(Protocol::ToolFree)? {
        if obs.correct {
            succ_set.insert(id.clone());
        } else {
            fail_set.insert(id.clone());
        }
    }
    Ok(Partition { fail_set, succ_set })
}

/// Fraction of the slice's samples answered correctly under `protocol`.
pub fn accuracy<S: Scalar>(slice: &ProtocolSlice, protocol: Protocol) -> Result<S> {
    let correct = slice.correct_count(protocol)?;
    if slice.is_empty() {
        return Err(Error::EmptySlice(slice.key.to_string()));
    }
    Ok(ratio(correct, slice.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Duplicate,
    ToolCallOutsideToolProtocol,
    NumCallsInconsistent,
    SampleSetMismatch,
    MissingToolFree,
    GridMismatch,
    UnexpectedModel,
    UnexpectedBenchmark,
    UnexpectedStep,
    MissingModel,
    MissingBenchmark,
    MissingStep,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub locator: String,
    pub kind: IssueKind,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.locator, self.kind, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn count(&self, kind: IssueKind) -> usize {
        self.errors
            .iter()
            .chain(&self.warnings)
            .filter(|i| i.kind == kind)
            .count()
    }

    fn error(&mut self, locator: String, kind: IssueKind, message: String) {
        self.errors.push(Issue {
            locator,
            kind,
            message,
        });
    }

    fn warning(&mut self, locator: String, kind: IssueKind, message: String) {
        self.warnings.push(Issue {
            locator,
            kind,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} error(s), {} warning(s)",
            self.errors.len(),
            self.warnings.len()
        )?;
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Optional declaration of what a record set should contain.
///
/// Read from a TOML file with the optional keys `models`, `benchmarks` and
/// `steps`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordManifest {
    #[serde(default)]
    pub models: Option<Vec<String>>,
    #[serde(default)]
    pub benchmarks: Option<Vec<String>>,
    #[serde(default)]
    pub steps: Option<Vec<u64>>,
}

impl RecordManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("record manifest: {e}")))
    }
}

/// Checks the structural invariants of a record set.
pub fn validate(records: &[EvalRecord]) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen: BTreeMap<(Protocol, &str, &str, u64, &str), usize> = BTreeMap::new();
    // key -> protocol -> sample ids
    let mut coverage: BTreeMap<(&str, &str, u64), BTreeMap<Protocol, BTreeSet<&str>>> =
        BTreeMap::new();

    for (i, r) in records.iter().enumerate() {
        let id = (
            r.protocol,
            r.model.as_str(),
            r.benchmark.as_str(),
            r.step,
            r.sample_id.as_str(),
        );
        if let Some(first) = seen.insert(id, i) {
            // keep the first occurrence as the reference
            seen.insert(id, first);
            report.error(
                r.locator(i),
                IssueKind::Duplicate,
                format!("duplicates record #{first}"),
            );
        }
        if r.tool_called && r.protocol != Protocol::ToolAvailable {
            report.error(
                r.locator(i),
                IssueKind::ToolCallOutsideToolProtocol,
                format!("tool_called = true under {}", r.protocol),
            );
        }
        if let Some(n) = r.num_calls {
            let inconsistent = match r.protocol {
                Protocol::ToolAvailable => (n > 0) != r.tool_called,
                _ => n > 0,
            };
            if inconsistent {
                report.error(
                    r.locator(i),
                    IssueKind::NumCallsInconsistent,
                    format!("num_calls = {n} but tool_called = {}", r.tool_called),
                );
            }
        }
        coverage
            .entry((r.model.as_str(), r.benchmark.as_str(), r.step))
            .or_default()
            .entry(r.protocol)
            .or_default()
            .insert(r.sample_id.as_str());
    }

    for ((model, benchmark, step), protocols) in &coverage {
        let locator = format!("{model}/{benchmark}/step {step}");
        let Some(reference) = protocols.get(&Protocol::ToolFree) else {
            report.error(
                locator,
                IssueKind::MissingToolFree,
                "checkpoint has no tool_free records".into(),
            );
            continue;
        };
        for (protocol, ids) in protocols {
            if ids != reference {
                let missing = reference.difference(ids).count();
                let extra = ids.difference(reference).count();
                report.error(
                    locator.clone(),
                    IssueKind::SampleSetMismatch,
                    format!(
                        "{protocol} covers {} samples ({missing} missing, {extra} extra vs tool_free)",
                        ids.len()
                    ),
                );
            }
        }
    }

    for (model, grids) in grids_by_model(coverage.keys().copied()) {
        let mut distinct = grids.values().collect::<Vec<_>>();
        distinct.dedup();
        if distinct.len() > 1 {
            let detail = grids
                .iter()
                .map(|(b, g)| format!("{b}: {} steps", g.len()))
                .collect::<Vec<_>>()
                .join(", ");
            report.warning(
                model.to_string(),
                IssueKind::GridMismatch,
                format!("checkpoint grids differ across benchmarks ({detail})"),
            );
        }
    }

    report
}

fn grids_by_model<'a>(
    keys: impl Iterator<Item = (&'a str, &'a str, u64)>,
) -> BTreeMap<&'a str, BTreeMap<&'a str, BTreeSet<u64>>> {
    let mut out: BTreeMap<&str, BTreeMap<&str, BTreeSet<u64>>> = BTreeMap::new();
    for (m, b, s) in keys {
        out.entry(m).or_default().entry(b).or_default().insert(s);
    }
    out
}

/// [`validate`] plus the stricter checks a [`RecordManifest`] enables.
pub fn validate_with_manifest(
    records: &[EvalRecord],
    manifest: &RecordManifest,
) -> ValidationReport {
    let mut report = validate(records);
    let models: BTreeSet<&str> = records.iter().map(|r| r.model.as_str()).collect();
    let benchmarks: BTreeSet<&str> = records.iter().map(|r| r.benchmark.as_str()).collect();

    if let Some(expected) = &manifest.models {
        let expected: BTreeSet<&str> = expected.iter().map(String::as_str).collect();
        for m in models.difference(&expected) {
            report.error(
                m.to_string(),
                IssueKind::UnexpectedModel,
                "model not declared in manifest".into(),
            );
        }
        for m in expected.difference(&models) {
            report.error(
                m.to_string(),
                IssueKind::MissingModel,
                "declared model has no records".into(),
            );
        }
    }
    if let Some(expected) = &manifest.benchmarks {
        let expected: BTreeSet<&str> = expected.iter().map(String::as_str).collect();
        for b in benchmarks.difference(&expected) {
            report.error(
                b.to_string(),
                IssueKind::UnexpectedBenchmark,
                "benchmark not declared in manifest".into(),
            );
        }
        for b in expected.difference(&benchmarks) {
            report.error(
                b.to_string(),
                IssueKind::MissingBenchmark,
                "declared benchmark has no records".into(),
            );
        }
    }
    if let Some(grid) = &manifest.steps {
        let grid: BTreeSet<u64> = grid.iter().copied().collect();
        let keys: BTreeSet<(&str, &str, u64)> = records
            .iter()
            .map(|r| (r.model.as_str(), r.benchmark.as_str(), r.step))
            .collect();
        for (model, per_bench) in grids_by_model(keys.into_iter()) {
            for (bench, steps) in per_bench {
                for s in steps.difference(&grid) {
                    report.error(
                        format!("{model}/{bench}/step {s}"),
                        IssueKind::UnexpectedStep,
                        "step not on the declared grid".into(),
                    );
                }
                for s in grid.difference(&steps) {
                    report.error(
                        format!("{model}/{bench}/step {s}"),
                        IssueKind::MissingStep,
                        "declared step has no records".into(),
                    );
                }
            }
        }
    }
    report
}

/// A validated record set indexed by checkpoint.
#[derive(Debug, Clone, Default)]
pub struct RecordSet {
    slices: BTreeMap<CheckpointKey, ProtocolSlice>,
}

impl RecordSet {
    /// Validates and indexes `records`.
    pub fn new(records: &[EvalRecord]) -> Result<Self> {
        let report = validate(records);
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        Ok(Self::index(records))
    }

    /// Indexes records that already passed validation.
    pub fn index(records: &[EvalRecord]) -> Self {
        let mut grouped: BTreeMap<
            CheckpointKey,
            BTreeMap<Protocol, BTreeMap<String, Observation>>,
        > = BTreeMap::new();
        for r in records {
            grouped
                .entry(r.key())
                .or_default()
                .entry(r.protocol)
                .or_default()
                .insert(
                    r.sample_id.clone(),
                    Observation {
                        correct: r.correct,
                        tool_called: r.tool_called,
                    },
                );
        }
        let slices = grouped
            .into_iter()
            .filter_map(|(k, v)| finish_slice(k.clone(), v).ok().map(|s| (k, s)))
            .collect();
        RecordSet { slices }
    }

    pub fn slice(&self, key: &CheckpointKey) -> Result<&ProtocolSlice> {
        self.slices
            .get(key)
            .ok_or_else(|| Error::KeyAbsent(key.to_string()))
    }

    pub fn slices(&self) -> impl Iterator<Item = &ProtocolSlice> {
        self.slices.values()
    }

    pub fn models(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.slices.keys().map(|k| &k.model).collect();
        set.into_iter().cloned().collect()
    }

    pub fn benchmarks(&self, model: &str) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .slices
            .keys()
            .filter(|k| k.model == model)
            .map(|k| &k.benchmark)
            .collect();
        set.into_iter().cloned().collect()
    }

    /// Checkpoint grid of one (model, benchmark), ascending.
    pub fn steps(&self, model: &str, benchmark: &str) -> Vec<u64> {
        self.slices
            .keys()
            .filter(|k| k.model == model && k.benchmark == benchmark)
            .map(|k| k.step)
            .collect()
    }

    /// Keeps only the listed models / benchmarks (`None` keeps everything).
    pub fn filtered(&self, models: Option<&[String]>, benchmarks: Option<&[String]>) -> Self {
        let keep = |list: Option<&[String]>, v: &String| list.is_none_or(|l| l.contains(v));
        RecordSet {
            slices: self
                .slices
                .iter()
                .filter(|(k, _)| keep(models, &k.model) && keep(benchmarks, &k.benchmark))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}
