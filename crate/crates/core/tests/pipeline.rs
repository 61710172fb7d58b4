use std::collections::BTreeMap;

use medkit_core::records::RecordSet;
use medkit_core::report::{build_bundle, memory_digest, PipelineConfig, Table, AREA, DRIFT, TERMS};
use medkit_core::synth::{generate, StepParams, SynthSpec};

fn records() -> Vec<medkit_core::records::EvalRecord> {
    let p = StepParams {
        mass_fail: 0.5,
        policy_call_fail: 0.4,
        policy_call_succ: 0.3,
        quality_gain_call: 0.35,
        quality_gain_nocall: 0.1,
        quality_harm_call: 0.1,
        quality_harm_nocall: 0.05,
    };
    let mut out = Vec::new();
    for (i, (model, bench)) in [("a", "x"), ("a", "y"), ("b", "x")].into_iter().enumerate() {
        let mut s = SynthSpec::constant(150, vec![0, 20, 40, 60], p, 0.6, i as u64);
        s.model = model.into();
        s.benchmark = bench.into();
        s.mass_fail = vec![0.5, 0.45, 0.42, 0.4];
        s.schema_accuracy = Some(0.4);
        out.extend(generate(&s).unwrap());
    }
    out
}

fn config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.aggregation.bootstrap_resamples = 100;
    c
}

fn keys(t: &Table) -> BTreeMap<(String, String, u64), usize> {
    let (m, b, s) = (
        t.column("model").unwrap(),
        t.column("benchmark").unwrap(),
        t.column("step").unwrap(),
    );
    let mut out = BTreeMap::new();
    for row in &t.rows {
        let key = (
            row[m].as_str().unwrap().to_owned(),
            row[b].as_str().unwrap().to_owned(),
            row[s].as_f64().unwrap() as u64,
        );
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

#[test]
fn every_checkpoint_appears_once_in_drift_and_terms() {
    let recs = records();
    let set = RecordSet::new(&recs).unwrap();
    let bundle = build_bundle(
        &set,
        &config(),
        vec![memory_digest("mem", &recs)],
        Vec::new(),
    )
    .unwrap();
    let drift = keys(bundle.table(DRIFT).unwrap());
    let terms = keys(bundle.table(TERMS).unwrap());
    assert_eq!(drift.len(), 12);
    assert_eq!(drift, terms);
    assert!(drift.values().all(|&n| n == 1));
    for t in &bundle.tables {
        assert!(!t.aggregation.is_empty());
        assert_eq!(
            bundle
                .manifest
                .tables
                .iter()
                .filter(|e| e.name == t.name)
                .count(),
            1
        );
    }
    // per-benchmark rows plus two aggregate rows for the two-benchmark model and the one-benchmark model
    assert_eq!(bundle.table(AREA).unwrap().rows.len(), 3 + 2 + 2);
}

#[test]
fn bundle_is_a_pure_function_of_inputs() {
    let recs = records();
    let set = RecordSet::new(&recs).unwrap();
    let a = build_bundle(&set, &config(), Vec::new(), Vec::new()).unwrap();
    let b = build_bundle(&set, &config(), Vec::new(), Vec::new()).unwrap();
    assert_eq!(a, b);
    let mut other = config();
    other.aggregation.rng_seed = 1;
    let c = build_bundle(&set, &other, Vec::new(), Vec::new()).unwrap();
    assert_eq!(a.table(TERMS), c.table(TERMS));
    assert_ne!(
        a.table("confidence_intervals"),
        c.table("confidence_intervals")
    );
}

#[test]
fn benchmark_filter_restricts_tables() {
    let recs = records();
    let set = RecordSet::new(&recs).unwrap();
    let mut cfg = config();
    cfg.benchmarks = Some(vec!["y".into()]);
    let bundle = build_bundle(&set, &cfg, Vec::new(), Vec::new()).unwrap();
    let drift = keys(bundle.table(DRIFT).unwrap());
    assert!(drift.keys().all(|(m, b, _)| m == "a" && b == "y"));
    assert_eq!(drift.len(), 4);
}
