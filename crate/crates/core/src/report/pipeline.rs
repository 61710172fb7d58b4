use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{AreaIntegrand, PipelineConfig};
use super::table::{Table, Value};
use crate::aggregate::{
    aggregate_direct, bootstrap_strata, ema_smooth, normalize_pair, AggregationConfig,
    BootstrapMode, ConfidenceInterval, Curve,
};
use crate::diagnose::{cohort_quality, factorize, CohortKind, CohortQuality};
use crate::explain::{cell_counts, decompose, Cell, PartitionStats, TermBreakdown};
use crate::measure::{drift_series, schema_gap, AreaSummary, DriftSeries, SchemaGap};
use crate::records::{
    parse_records, validate, validate_with_manifest, CheckpointKey, EvalRecord, ParseError,
    Protocol, RecordManifest, RecordSet, ValidationReport,
};
use crate::{Error, Result, VERSION};

pub const DRIFT: &str = "drift";
pub const AREA: &str = "area";
pub const TERMS: &str = "terms";
pub const FACTORS: &str = "factors";
pub const COHORTS: &str = "cohorts";
pub const SCHEMA_GAP: &str = "schema_gap";
pub const SCHEMA_GAP_SUMMARY: &str = "schema_gap_summary";
pub const AGGREGATE_CURVES: &str = "aggregate_curves";
pub const CONFIDENCE_INTERVALS: &str = "confidence_intervals";

/// Pipeline stage; each CLI subcommand emits the tables of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Measure,
    Explain,
    Diagnose,
    Aggregate,
    Report,
}

impl Stage {
    pub fn tables(self) -> &'static [&'static str] {
        match self {
            Stage::Measure => &[DRIFT, AREA, SCHEMA_GAP, SCHEMA_GAP_SUMMARY],
            Stage::Explain => &[TERMS],
            Stage::Diagnose => &[FACTORS, COHORTS],
            Stage::Aggregate => &[AGGREGATE_CURVES, CONFIDENCE_INTERVALS],
            Stage::Report => &[
                DRIFT,
                AREA,
                TERMS,
                FACTORS,
                COHORTS,
                SCHEMA_GAP,
                SCHEMA_GAP_SUMMARY,
                AGGREGATE_CURVES,
                CONFIDENCE_INTERVALS,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableEntry {
    pub name: String,
    pub aggregation: String,
    pub rows: usize,
}

/// Provenance of a bundle: tool version, config echo and input digests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// The configuration with the output directory removed.
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub tables: Vec<TableEntry>,
    pub notices: Vec<String>,
    pub validation_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub tables: Vec<Table>,
    pub notices: Vec<String>,
    pub manifest: Manifest,
    /// Human-readable digest with one-decimal percentages.
    pub summary: String,
}

impl ReportBundle {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Keeps only the tables a stage emits.
    pub fn select(mut self, stage: Stage) -> Self {
        let keep = stage.tables();
        self.tables.retain(|t| keep.contains(&t.name.as_str()));
        self.manifest
            .tables
            .retain(|t| keep.contains(&t.name.as_str()));
        self
    }
}

/// Records read from input files, plus their digests.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub records: Vec<EvalRecord>,
    pub digests: Vec<InputDigest>,
}

/// Reads and parses every input file, in order. Parse errors from all files
/// are collected before failing.
pub fn load_inputs(paths: &[PathBuf]) -> Result<LoadedInputs> {
    let mut records = Vec::new();
    let mut digests = Vec::new();
    let mut errors: Vec<ParseError> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        let sha256 = hex::encode(Sha256::digest(&bytes));
        match parse_records(&text) {
            Ok(mut recs) => {
                digests.push(InputDigest {
                    path: path.display().to_string(),
                    sha256,
                    records: recs.len(),
                });
                records.append(&mut recs);
            }
            Err(errs) => errors.extend(errs.into_iter().map(|mut e| {
                e.message = format!("{}: {}", path.display(), e.message);
                e
            })),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Parse(errors));
    }
    Ok(LoadedInputs { records, digests })
}

/// Validates records against the config's optional record manifest.
pub fn validate_inputs(
    records: &[EvalRecord],
    config: &PipelineConfig,
) -> Result<ValidationReport> {
    Ok(match &config.record_manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            validate_with_manifest(records, &RecordManifest::parse(&text)?)
        }
        None => validate(records),
    })
}

/// Loads, validates and analyzes the configured inputs.
pub fn run_pipeline(config: &PipelineConfig) -> Result<ReportBundle> {
    if config.inputs.is_empty() {
        return Err(Error::Config("no input paths given".into()));
    }
    config.aggregation.validate()?;
    let loaded = load_inputs(&config.inputs)?;
    let report = validate_inputs(&loaded.records, config)?;
    if !report.is_ok() {
        return Err(Error::Validation(report));
    }
    let set = RecordSet::index(&loaded.records);
    let warnings = report.warnings.iter().map(ToString::to_string).collect();
    build_bundle(&set, config, loaded.digests, warnings)
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

fn area_for(
    steps: &[u64],
    f_wo: &[f64],
    f_w: &[f64],
    integrand: AreaIntegrand,
    agg: &AggregationConfig,
) -> Result<AreaSummary<f64>> {
    let times: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    match integrand {
        AreaIntegrand::Raw => AreaSummary::from_curves(&times, f_wo, f_w),
        AreaIntegrand::Smoothed => {
            let smooth =
                |v: &[f64]| ema_smooth(steps, v, agg.smoothing_alpha, agg.smoothing_ref_interval);
            AreaSummary::from_curves(&times, &smooth(f_wo)?, &smooth(f_w)?)
        }
    }
}

/// Per-sample observations over a benchmark's whole grid; the bootstrap unit.
#[derive(Debug, Clone)]
struct Trajectory {
    wo: Vec<bool>,
    w: Vec<bool>,
    called: Vec<bool>,
}

fn trajectories(
    set: &RecordSet,
    model: &str,
    benchmark: &str,
    steps: &[u64],
) -> Option<Vec<Trajectory>> {
    let slices: Vec<_> = steps
        .iter()
        .map(|&s| set.slice(&CheckpointKey::new(model, benchmark, s)).ok())
        .collect::<Option<_>>()?;
    let samples = &slices.first()?.samples;
    if slices
        .iter()
        .any(|s| &s.samples != samples || !s.has(Protocol::ToolAvailable))
    {
        return None;
    }
    let maps: Vec<_> = slices
        .iter()
        .map(|s| {
            (
                s.protocol(Protocol::ToolFree).ok(),
                s.protocol(Protocol::ToolAvailable).ok(),
            )
        })
        .collect();
    samples
        .iter()
        .map(|id| {
            let mut t = Trajectory {
                wo: Vec::with_capacity(steps.len()),
                w: Vec::with_capacity(steps.len()),
                called: Vec::with_capacity(steps.len()),
            };
            for &(wo, w) in &maps {
                let a = wo?.get(id)?;
                let b = w?.get(id)?;
                t.wo.push(a.correct);
                t.w.push(b.correct);
                t.called.push(b.tool_called);
            }
            Some(t)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum CiMetric {
    AccWo(usize),
    AccW(usize),
    QualityGainCall(usize),
    QualityHarmCall(usize),
    STool,
}

fn group_metric(
    group: &[&Trajectory],
    metric: CiMetric,
    steps: &[u64],
    integrand: AreaIntegrand,
    agg: &AggregationConfig,
) -> Option<f64> {
    let frac = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    match metric {
        CiMetric::AccWo(k) => frac(group.iter().filter(|t| t.wo[k]).count(), group.len()),
        CiMetric::AccW(k) => frac(group.iter().filter(|t| t.w[k]).count(), group.len()),
        CiMetric::QualityGainCall(k) => {
            let called: Vec<_> = group.iter().filter(|t| !t.wo[k] && t.called[k]).collect();
            frac(called.iter().filter(|t| t.w[k]).count(), called.len())
        }
        CiMetric::QualityHarmCall(k) => {
            let called: Vec<_> = group.iter().filter(|t| t.wo[k] && t.called[k]).collect();
            frac(called.iter().filter(|t| !t.w[k]).count(), called.len())
        }
        CiMetric::STool => {
            let (f_wo, f_w) = normalized_drift(group, steps.len())?;
            area_for(steps, &f_wo, &f_w, integrand, agg).ok()?.s_tool
        }
    }
}

fn normalized_drift(group: &[&Trajectory], n_steps: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    if group.is_empty() {
        return None;
    }
    let n = group.len() as f64;
    let acc = |pick: fn(&Trajectory) -> &Vec<bool>| -> Vec<f64> {
        (0..n_steps)
            .map(|k| group.iter().filter(|t| pick(t)[k]).count() as f64 / n)
            .collect()
    };
    let (wo, w) = (acc(|t| &t.wo), acc(|t| &t.w));
    let f_wo: Vec<f64> = wo.iter().map(|a| a - wo[0]).collect();
    let f_w: Vec<f64> = w.iter().map(|a| a - w[0]).collect();
    let (a, b) = normalize_pair(&f_wo, &f_w);
    Some((a.values, b.values))
}

type CurvePair = (Vec<f64>, Vec<f64>);

fn statistic(
    groups: &[Vec<&Trajectory>],
    metric: CiMetric,
    steps: &[u64],
    integrand: AreaIntegrand,
    agg: &AggregationConfig,
) -> Option<f64> {
    if let CiMetric::STool = metric {
        let curves: Vec<CurvePair> = groups
            .iter()
            .map(|g| normalized_drift(g, steps.len()))
            .collect::<Option<_>>()?;
        let mean = |pick: fn(&CurvePair) -> &Vec<f64>| -> Vec<f64> {
            (0..steps.len())
                .map(|k| mean_defined(curves.iter().map(|c| Some(pick(c)[k]))).unwrap_or(0.0))
                .collect()
        };
        let (f_wo, f_w) = (mean(|c| &c.0), mean(|c| &c.1));
        return area_for(steps, &f_wo, &f_w, integrand, agg).ok()?.s_tool;
    }
    mean_defined(
        groups
            .iter()
            .map(|g| group_metric(g, metric, steps, integrand, agg)),
    )
}

struct BenchAnalysis {
    name: String,
    steps: Vec<u64>,
    drift: Option<DriftSeries<f64>>,
    /// Per step, when tool-available records exist.
    stats: Vec<Option<PartitionStats>>,
    cohorts: Vec<CohortQuality<f64>>,
    schema: Vec<(u64, SchemaGap<f64>)>,
    trajectories: Option<Vec<Trajectory>>,
}

struct Builder<'a> {
    set: &'a RecordSet,
    config: &'a PipelineConfig,
    notices: Vec<String>,
    drift: Table,
    area: Table,
    terms: Table,
    factors: Table,
    cohorts: Table,
    schema: Table,
    schema_summary: Table,
    curves: Table,
    ci: Table,
    summary: String,
}

/// Builds every table for an already validated record set.
pub fn build_bundle(
    set: &RecordSet,
    config: &PipelineConfig,
    digests: Vec<InputDigest>,
    validation_warnings: Vec<String>,
) -> Result<ReportBundle> {
    let set = set.filtered(config.models.as_deref(), config.benchmarks.as_deref());
    let mut b = Builder::new(&set, config);
    let _ = writeln!(b.summary, "medkit {VERSION} report");
    if set.is_empty() {
        b.notices
            .push("no records match the model/benchmark filters".into());
    }
    for model in set.models() {
        b.model(&model)?;
    }
    if b.schema.rows.is_empty() {
        b.notices
            .push("no schema_only records: schema-gap tables omitted".into());
    }
    b.finish(digests, validation_warnings)
}

impl<'a> Builder<'a> {
    fn new(set: &'a RecordSet, config: &'a PipelineConfig) -> Self {
        let cells: Vec<String> = Cell::all()
            .map(|c| {
                format!(
                    "n_{}_{}_{}",
                    c.domain.as_str(),
                    c.action.as_str(),
                    c.verdict.as_str()
                )
            })
            .collect();
        let mut term_cols = vec!["model", "benchmark", "step", "n_total"];
        term_cols.extend(cells.iter().map(String::as_str));
        term_cols.extend([
            "call_gain",
            "schema_gain",
            "call_harm",
            "schema_harm",
            "gross_gain",
            "gross_harm",
            "gap_reconstructed",
            "gap_observed",
        ]);
        let mixed = "see column mode";
        Builder {
            set,
            config,
            notices: Vec::new(),
            drift: Table::new(
                DRIFT,
                "per_benchmark",
                &[
                    "model",
                    "benchmark",
                    "step",
                    "acc_wo",
                    "acc_w",
                    "f_wo",
                    "f_w",
                    "gap",
                    "delta_tool",
                ],
            ),
            area: Table::new(
                AREA,
                mixed,
                &[
                    "model",
                    "benchmark",
                    "mode",
                    "integrand",
                    "b_wo",
                    "b_tool_pos",
                    "b_tool_neg",
                    "s_tool",
                ],
            ),
            terms: Table::new(TERMS, "per_benchmark", &term_cols),
            factors: Table::new(
                FACTORS,
                "per_benchmark",
                &[
                    "model",
                    "benchmark",
                    "step",
                    "domain",
                    "action",
                    "outcome",
                    "count",
                    "mass",
                    "policy",
                    "quality",
                    "term",
                ],
            ),
            cohorts: Table::new(
                COHORTS,
                mixed,
                &[
                    "model",
                    "benchmark",
                    "step",
                    "cohort_kind",
                    "mode",
                    "n_cohort",
                    "n_called",
                    "quality",
                    "low_support",
                ],
            ),
            schema: Table::new(
                SCHEMA_GAP,
                "per_benchmark",
                &[
                    "model",
                    "benchmark",
                    "step",
                    "acc_wo",
                    "acc_schema",
                    "gap",
                    "acc_w",
                ],
            ),
            schema_summary: Table::new(
                SCHEMA_GAP_SUMMARY,
                "mean_of_benchmarks",
                &[
                    "model",
                    "acc_wo",
                    "acc_schema",
                    "gap",
                    "acc_w",
                    "step",
                    "n_benchmarks",
                ],
            ),
            curves: Table::new(
                AGGREGATE_CURVES,
                mixed,
                &["model", "series", "aggregation", "step", "raw", "smoothed"],
            ),
            ci: Table::new(
                CONFIDENCE_INTERVALS,
                mixed,
                &[
                    "model",
                    "metric",
                    "mode",
                    "level",
                    "init_point",
                    "init_lower",
                    "init_upper",
                    "final_point",
                    "final_lower",
                    "final_upper",
                ],
            ),
            summary: String::new(),
        }
    }

    fn bench(&mut self, model: &str, bench: &str) -> Result<BenchAnalysis> {
        let set = self.set;
        let steps = set.steps(model, bench);
        let drift = match drift_series::<f64>(set, model, bench) {
            Ok(d) => Some(d),
            Err(e) => {
                self.notices
                    .push(format!("{model}/{bench}: drift skipped: {e}"));
                None
            }
        };
        let mut stats = Vec::with_capacity(steps.len());
        let mut schema = Vec::new();
        let mut cohorts = Vec::new();
        let has_initial = steps.first() == Some(&0);
        for &step in &steps {
            let slice = set.slice(&CheckpointKey::new(model, bench, step))?;
            stats.push(if slice.has(Protocol::ToolAvailable) {
                Some(cell_counts(slice)?)
            } else {
                self.notices.push(format!(
                    "{model}/{bench}/step {step}: no tool_available records; terms skipped"
                ));
                None
            });
            if slice.has(Protocol::SchemaOnly) {
                schema.push((step, schema_gap::<f64>(slice)?));
            }
            if has_initial && slice.has(Protocol::ToolAvailable) {
                for kind in CohortKind::ALL {
                    cohorts.push(cohort_quality(
                        set,
                        model,
                        bench,
                        kind,
                        step,
                        self.config.low_support_threshold,
                    )?);
                }
            }
        }
        if !has_initial {
            self.notices
                .push(format!("{model}/{bench}: no step 0; cohorts skipped"));
        }
        let trajectories = trajectories(set, model, bench, &steps);
        if trajectories.is_none() {
            self.notices.push(format!(
                "{model}/{bench}: sample sets or protocols vary across steps; excluded from confidence intervals"
            ));
        }
        Ok(BenchAnalysis {
            name: bench.to_owned(),
            steps,
            drift,
            stats,
            cohorts,
            schema,
            trajectories,
        })
    }

    fn emit_bench(&mut self, model: &str, a: &BenchAnalysis) -> Result<()> {
        let bench = a.name.as_str();
        if let Some(d) = &a.drift {
            for i in 0..d.len() {
                self.drift.push(vec![
                    model.into(),
                    bench.into(),
                    d.steps[i].into(),
                    d.acc_wo[i].into(),
                    d.acc_w[i].into(),
                    d.f_wo[i].into(),
                    d.f_w[i].into(),
                    d.gap[i].into(),
                    d.delta_tool[i].into(),
                ]);
            }
            if d.len() >= 2 {
                let s = area_for(
                    &d.steps,
                    &d.f_wo,
                    &d.f_w,
                    self.config.area_integrand,
                    &self.config.aggregation,
                )?;
                self.push_area(model, bench, "per_benchmark", &s);
            }
        }
        for (&step, stats) in a.steps.iter().zip(&a.stats) {
            let Some(stats) = stats else { continue };
            let t: TermBreakdown<f64> = decompose(stats);
            let n = stats.n_total();
            let observed = (stats.tool_correct() as f64
                - stats.domain_size(crate::explain::Domain::Succ) as f64)
                / n as f64;
            let mut row: Vec<Value> = vec![model.into(), bench.into(), step.into(), n.into()];
            row.extend(stats.counts().iter().map(|&c| Value::from(c)));
            row.extend(
                [
                    t.call_gain,
                    t.schema_gain,
                    t.call_harm,
                    t.schema_harm,
                    t.gross_gain,
                    t.gross_harm,
                    t.gap_reconstructed,
                    observed,
                ]
                .map(Value::from),
            );
            self.terms.push(row);
            for cell in Cell::all() {
                let f = factorize::<f64>(stats, cell);
                self.factors.push(vec![
                    model.into(),
                    bench.into(),
                    step.into(),
                    cell.domain.as_str().into(),
                    cell.action.as_str().into(),
                    cell.verdict.as_str().into(),
                    stats.count(cell).into(),
                    f.mass.into(),
                    f.policy.into(),
                    f.quality.into(),
                    (stats.count(cell) as f64 / n as f64).into(),
                ]);
            }
        }
        for c in &a.cohorts {
            self.push_cohort(model, bench, "per_benchmark", c);
        }
        for (step, g) in &a.schema {
            self.schema.push(vec![
                model.into(),
                bench.into(),
                (*step).into(),
                g.acc_wo.into(),
                g.acc_schema.into(),
                g.gap.into(),
                g.acc_w.into(),
            ]);
        }
        Ok(())
    }

    fn push_area(&mut self, model: &str, bench: &str, mode: &str, s: &AreaSummary<f64>) {
        self.area.push(vec![
            model.into(),
            bench.into(),
            mode.into(),
            self.config.area_integrand.to_string().into(),
            s.b_wo.into(),
            s.b_tool_pos.into(),
            s.b_tool_neg.into(),
            s.s_tool.into(),
        ]);
    }

    fn push_cohort(&mut self, model: &str, bench: &str, mode: &str, c: &CohortQuality<f64>) {
        self.cohorts.push(vec![
            model.into(),
            bench.into(),
            c.step.into(),
            c.cohort_kind.as_str().into(),
            mode.into(),
            c.n_cohort.into(),
            c.n_called.into(),
            c.quality.into(),
            c.low_support.into(),
        ]);
    }

    fn push_curve(
        &mut self,
        model: &str,
        series: &str,
        aggregation: &str,
        steps: &[u64],
        raw: &[Option<f64>],
    ) -> Result<()> {
        let smoothed: Vec<Option<f64>> = match raw.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(v) => ema_smooth(
                steps,
                &v,
                self.config.aggregation.smoothing_alpha,
                self.config.aggregation.smoothing_ref_interval,
            )?
            .into_iter()
            .map(Some)
            .collect(),
            None => vec![None; raw.len()],
        };
        for i in 0..steps.len() {
            self.curves.push(vec![
                model.into(),
                series.into(),
                aggregation.into(),
                steps[i].into(),
                raw[i].into(),
                smoothed[i].into(),
            ]);
        }
        Ok(())
    }

    fn model(&mut self, model: &str) -> Result<()> {
        let benches: Vec<BenchAnalysis> = self
            .set
            .benchmarks(model)
            .iter()
            .map(|b| self.bench(model, b))
            .collect::<Result<_>>()?;
        for a in &benches {
            self.emit_bench(model, a)?;
        }
        let _ = writeln!(
            self.summary,
            "\nmodel {model} ({} benchmark(s))",
            benches.len()
        );

        self.schema_summary_rows(model, &benches);
        self.cohort_aggregates(model, &benches);

        let grid = &benches[0].steps;
        let aligned = benches.iter().all(|b| &b.steps == grid);
        if !aligned {
            self.notices.push(format!(
                "{model}: checkpoint grids differ across benchmarks; aggregates skipped"
            ));
            return Ok(());
        }
        let drifts: Option<Vec<&DriftSeries<f64>>> =
            benches.iter().map(|b| b.drift.as_ref()).collect();
        let Some(drifts) = drifts else {
            self.notices.push(format!(
                "{model}: some benchmarks lack drift series; aggregates skipped"
            ));
            return Ok(());
        };
        self.aggregate_curves(model, grid, &drifts, &benches)?;
        self.intervals(model, grid, &benches)?;
        Ok(())
    }

    fn schema_summary_rows(&mut self, model: &str, benches: &[BenchAnalysis]) {
        let mut steps: Vec<u64> = benches
            .iter()
            .flat_map(|b| b.schema.iter().map(|(s, _)| *s))
            .collect();
        steps.sort_unstable();
        steps.dedup();
        for step in steps {
            let gaps: Vec<&SchemaGap<f64>> = benches
                .iter()
                .filter_map(|b| b.schema.iter().find(|(s, _)| *s == step).map(|(_, g)| g))
                .collect();
            let acc_wo = mean_defined(gaps.iter().map(|g| Some(g.acc_wo)));
            let acc_schema = mean_defined(gaps.iter().map(|g| Some(g.acc_schema)));
            let acc_w = if gaps.iter().all(|g| g.acc_w.is_some()) {
                mean_defined(gaps.iter().map(|g| g.acc_w))
            } else {
                None
            };
            let gap = acc_schema.zip(acc_wo).map(|(s, w)| s - w);
            let pct = |x: Option<f64>, unit: &str| {
                x.map_or("n/a".to_string(), |v| format!("{:.1}{unit}", v * 100.0))
            };
            let _ = writeln!(
                self.summary,
                "  schema interference at step {step}: intrinsic {}, schema-only {}, gap {}, tool {}",
                pct(acc_wo, "%"),
                pct(acc_schema, "%"),
                pct(gap, " pp"),
                pct(acc_w, "%")
            );
            self.schema_summary.push(vec![
                model.into(),
                acc_wo.into(),
                acc_schema.into(),
                gap.into(),
                acc_w.into(),
                step.into(),
                gaps.len().into(),
            ]);
        }
    }

    fn cohort_aggregates(&mut self, model: &str, benches: &[BenchAnalysis]) {
        let mut keys: Vec<(u64, CohortKind)> = benches
            .iter()
            .flat_map(|b| b.cohorts.iter().map(|c| (c.step, c.cohort_kind)))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let threshold = self.config.low_support_threshold;
        for (step, kind) in keys {
            let parts: Vec<CohortQuality<f64>> = benches
                .iter()
                .filter_map(|b| {
                    b.cohorts
                        .iter()
                        .find(|c| c.step == step && c.cohort_kind == kind)
                        .copied()
                })
                .collect();
            let Some(pooled) = CohortQuality::pooled(&parts, threshold) else {
                continue;
            };
            self.push_cohort(model, "*", "pooled", &pooled);
            let averaged = CohortQuality {
                quality: mean_defined(parts.iter().map(|p| p.quality)),
                ..pooled
            };
            self.push_cohort(model, "*", "mean_of_benchmarks", &averaged);
        }
    }

    fn aggregate_curves(
        &mut self,
        model: &str,
        grid: &[u64],
        drifts: &[&DriftSeries<f64>],
        benches: &[BenchAnalysis],
    ) -> Result<()> {
        let agg = self.config.aggregation.clone();
        let integrand = self.config.area_integrand;

        // normalized drift
        let mut wo = Vec::new();
        let mut w = Vec::new();
        for d in drifts {
            let (a, b) = normalize_pair(&d.f_wo, &d.f_w);
            if a.divisor.is_none() {
                self.notices.push(format!(
                    "{model}/{}: drift is identically zero; normalized to zero",
                    d.benchmark
                ));
            }
            wo.push(Curve::new(grid.to_vec(), a.values)?);
            w.push(Curve::new(grid.to_vec(), b.values)?);
        }
        let f_wo = aggregate_direct(&wo)?.values;
        let f_w = aggregate_direct(&w)?.values;
        self.push_curve(
            model,
            "f_wo",
            "normalized",
            grid,
            &f_wo.iter().map(|&v| Some(v)).collect::<Vec<_>>(),
        )?;
        self.push_curve(
            model,
            "f_w",
            "normalized",
            grid,
            &f_w.iter().map(|&v| Some(v)).collect::<Vec<_>>(),
        )?;

        let mut s_tool_line = String::new();
        if grid.len() >= 2 {
            let normalized = area_for(grid, &f_wo, &f_w, integrand, &agg)?;
            self.push_area(model, "*", "normalized_aggregate", &normalized);
            let per: Vec<AreaSummary<f64>> = drifts
                .iter()
                .map(|d| area_for(&d.steps, &d.f_wo, &d.f_w, integrand, &agg))
                .collect::<Result<_>>()?;
            let mean = |f: fn(&AreaSummary<f64>) -> Option<f64>| mean_defined(per.iter().map(f));
            let averaged = AreaSummary {
                b_wo: mean(|a| Some(a.b_wo)).unwrap_or(0.0),
                b_tool_pos: mean(|a| Some(a.b_tool_pos)).unwrap_or(0.0),
                b_tool_neg: mean(|a| Some(a.b_tool_neg)).unwrap_or(0.0),
                s_tool: mean(|a| a.s_tool),
            };
            self.push_area(model, "*", "mean_of_benchmarks", &averaged);
            let pct =
                |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
            s_tool_line = format!(
                "  S_tool: {} (normalized aggregate), {} (mean of benchmarks)",
                pct(normalized.s_tool),
                pct(averaged.s_tool)
            );
        }

        // direct averages
        type Pick = fn(&DriftSeries<f64>, usize) -> f64;
        let direct: [(&str, Pick); 4] = [
            ("acc_wo", |d, i| d.acc_wo[i]),
            ("acc_w", |d, i| d.acc_w[i]),
            ("gap", |d, i| d.gap[i]),
            ("delta_tool", |d, i| d.delta_tool[i]),
        ];
        let mut means = Vec::new();
        for (name, pick) in direct {
            let curves: Vec<Curve<f64>> = drifts
                .iter()
                .map(|d| Curve::new(grid.to_vec(), (0..grid.len()).map(|i| pick(d, i)).collect()))
                .collect::<Result<_>>()?;
            let m = aggregate_direct(&curves)?.values;
            self.push_curve(
                model,
                name,
                "direct",
                grid,
                &m.iter().map(|&v| Some(v)).collect::<Vec<_>>(),
            )?;
            means.push(m);
        }

        type TermPick = fn(&PartitionStats) -> Option<f64>;
        let per_step: [(&str, TermPick); 10] = [
            ("call_gain", |s| Some(decompose::<f64>(s).call_gain)),
            ("schema_gain", |s| Some(decompose::<f64>(s).schema_gain)),
            ("call_harm", |s| Some(decompose::<f64>(s).call_harm)),
            ("schema_harm", |s| Some(decompose::<f64>(s).schema_harm)),
            ("gross_gain", |s| Some(decompose::<f64>(s).gross_gain)),
            ("gross_harm", |s| Some(decompose::<f64>(s).gross_harm)),
            ("policy_call_fail", |s| {
                factorize::<f64>(s, Cell::CALL_GAIN).policy
            }),
            ("quality_correct_call_fail", |s| {
                factorize::<f64>(s, Cell::CALL_GAIN).quality
            }),
            ("policy_call_succ", |s| {
                factorize::<f64>(s, Cell::CALL_HARM).policy
            }),
            ("quality_incorrect_call_succ", |s| {
                factorize::<f64>(s, Cell::CALL_HARM).quality
            }),
        ];
        let mut term_means = Vec::new();
        for (name, pick) in per_step {
            let raw: Vec<Option<f64>> = (0..grid.len())
                .map(|i| mean_defined(benches.iter().map(|b| b.stats[i].as_ref().and_then(pick))))
                .collect();
            self.push_curve(model, name, "direct", grid, &raw)?;
            term_means.push(raw);
        }

        let last = grid.len() - 1;
        let pct = |v: f64| format!("{:.1}%", v * 100.0);
        let _ = writeln!(
            self.summary,
            "  tool-free accuracy: {} -> {}\n  tool-available accuracy: {} -> {}",
            pct(means[0][0]),
            pct(means[0][last]),
            pct(means[1][0]),
            pct(means[1][last])
        );
        if !s_tool_line.is_empty() {
            let _ = writeln!(self.summary, "{s_tool_line}");
        }
        let term = |j: usize, i: usize| term_means[j][i].map_or("n/a".to_string(), pct);
        for (label, i) in [("initial", 0), ("final", last)] {
            let _ = writeln!(
                self.summary,
                "  {label} terms (step {}): call gain {}, schema gain {}, call harm {}, schema harm {}",
                grid[i],
                term(0, i),
                term(1, i),
                term(2, i),
                term(3, i)
            );
        }
        Ok(())
    }

    fn intervals(&mut self, model: &str, grid: &[u64], benches: &[BenchAnalysis]) -> Result<()> {
        let strata: Vec<&[Trajectory]> = benches
            .iter()
            .filter_map(|b| b.trajectories.as_deref())
            .filter(|t| !t.is_empty())
            .collect();
        if strata.is_empty() {
            self.notices.push(format!(
                "{model}: no complete trajectories; intervals skipped"
            ));
            return Ok(());
        }
        let agg = self.config.aggregation.clone();
        let integrand = self.config.area_integrand;
        let last = grid.len() - 1;
        let metrics: [(&str, Option<CiMetric>, Option<CiMetric>); 5] = [
            (
                "acc_wo",
                Some(CiMetric::AccWo(0)),
                Some(CiMetric::AccWo(last)),
            ),
            ("acc_w", Some(CiMetric::AccW(0)), Some(CiMetric::AccW(last))),
            ("s_tool", None, (last > 0).then_some(CiMetric::STool)),
            (
                "quality_correct_call_fail",
                Some(CiMetric::QualityGainCall(0)),
                Some(CiMetric::QualityGainCall(last)),
            ),
            (
                "quality_incorrect_call_succ",
                Some(CiMetric::QualityHarmCall(0)),
                Some(CiMetric::QualityHarmCall(last)),
            ),
        ];
        let run = |metric: Option<CiMetric>, mode: BootstrapMode| -> Option<ConfidenceInterval> {
            let metric = metric?;
            bootstrap_strata(
                &strata,
                |g| statistic(g, metric, grid, integrand, &agg),
                mode,
                &agg,
            )
            .ok()
        };
        for mode in self.config.bootstrap_mode.modes() {
            for (name, init, fin) in metrics {
                let a = run(init, mode);
                let b = run(fin, mode);
                let cols = |c: Option<ConfidenceInterval>| -> [Value; 3] {
                    match c {
                        Some(c) => [c.point.into(), c.lower.into(), c.upper.into()],
                        None => [Value::Null, Value::Null, Value::Null],
                    }
                };
                let mut row: Vec<Value> = vec![
                    model.into(),
                    name.into(),
                    mode.as_str().into(),
                    agg.ci_level.into(),
                ];
                row.extend(cols(a));
                row.extend(cols(b));
                self.ci.push(row);
            }
        }
        Ok(())
    }

    fn finish(
        mut self,
        digests: Vec<InputDigest>,
        validation_warnings: Vec<String>,
    ) -> Result<ReportBundle> {
        let mut config = self.config.clone();
        config.out_dir = None;
        let config = serde_json::to_value(&config)?;
        let mut tables = vec![
            self.drift,
            self.area,
            self.terms,
            self.factors,
            self.cohorts,
        ];
        if self.schema.rows.is_empty() {
            // keep the stage's table list stable, the notice explains the omission
        } else {
            tables.push(self.schema);
            tables.push(self.schema_summary);
        }
        tables.push(self.curves);
        tables.push(self.ci);

        if !self.notices.is_empty() {
            let _ = writeln!(self.summary, "\nnotices:");
            for n in &self.notices {
                let _ = writeln!(self.summary, "  - {n}");
            }
        }
        let manifest = Manifest {
            tool: "medkit".into(),
            version: VERSION.into(),
            config,
            inputs: digests,
            tables: tables
                .iter()
                .map(|t| TableEntry {
                    name: t.name.clone(),
                    aggregation: t.aggregation.clone(),
                    rows: t.rows.len(),
                })
                .collect(),
            notices: self.notices.clone(),
            validation_warnings,
        };
        Ok(ReportBundle {
            tables,
            notices: self.notices,
            manifest,
            summary: self.summary,
        })
    }
}

/// Digest entry for an in-memory record set (no backing file).
pub fn memory_digest(name: &str, records: &[EvalRecord]) -> InputDigest {
    let mut hasher = Sha256::new();
    for r in records {
        hasher.update(r.to_json_line().as_bytes());
        hasher.update(b"\n");
    }
    InputDigest {
        path: name.into(),
        sha256: hex::encode(hasher.finalize()),
        records: records.len(),
    }
}

/// Writes records in wire format, one per line.
pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut text = String::with_capacity(records.len() * 128);
    for r in records {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
