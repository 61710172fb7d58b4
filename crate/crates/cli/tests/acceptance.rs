//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use medkit_core::aggregate::{
    aggregate_direct, bootstrap_ci, normalize_drift, normalize_pair, AggregationConfig, Curve,
};
use medkit_core::diagnose::{cohort_quality, factorize, CohortKind};
use medkit_core::explain::{cell_counts, decompose, Cell, PartitionStats};
use medkit_core::measure::{abs_area, drift_series, AreaSummary, DriftSeries};
use medkit_core::records::{slice, CheckpointKey, EvalRecord, Protocol, RecordSet};
use medkit_core::synth::{expected_metrics, generate, SynthSpec};
use medkit_core::Rational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Random paired observations: (tool-free correct, called, tool-available correct).
type Rows = Vec<(bool, bool, bool)>;

fn random_rows(rng: &mut ChaCha8Rng) -> Rows {
    let n = rng.gen_range(1..=500);
    // vary the rates per slice so sparse and dense cells both occur
    let (p_wo, p_call, p_w) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
    (0..n)
        .map(|_| (rng.gen_bool(p_wo), rng.gen_bool(p_call), rng.gen_bool(p_w)))
        .collect()
}

fn rows_to_records(rows: &Rows, step: u64) -> Vec<EvalRecord> {
    let mut out = Vec::with_capacity(rows.len() * 2);
    for (i, &(wo, called, w)) in rows.iter().enumerate() {
        let id = format!("s{i:04}");
        out.push(EvalRecord::new(
            "m",
            "b",
            step,
            &id,
            Protocol::ToolFree,
            wo,
            false,
        ));
        out.push(EvalRecord::new(
            "m",
            "b",
            step,
            &id,
            Protocol::ToolAvailable,
            w,
            called,
        ));
    }
    out
}

fn corpus() -> Vec<Rows> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    (0..1000).map(|_| random_rows(&mut rng)).collect()
}

fn decomposition_identity(corpus: &[Rows]) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for (k, rows) in corpus.iter().enumerate() {
        let records = rows_to_records(rows, 0);
        let s = slice(&records, &CheckpointKey::new("m", "b", 0)).expect("slice");
        let terms = decompose::<f64>(&cell_counts(&s).expect("counts"));
        let n = rows.len() as f64;
        let acc_wo = rows.iter().filter(|r| r.0).count() as f64 / n;
        let acc_w = rows.iter().filter(|r| r.2).count() as f64 / n;
        let err = (terms.gap_reconstructed - (acc_w - acc_wo)).abs();
        worst = worst.max(err);
        if err > 1e-12 {
            failures += 1;
            eprintln!("  slice {k}: error {err:e}");
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(5),
        format!(
            "{} slices, {failures} violations, max error {worst:e}, {:.2}s",
            corpus.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn drift_identity(corpus: &[Rows]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut points = 0;
    // random accuracy series on fractions k/n
    for _ in 0..1000 {
        let len = rng.gen_range(2..=10);
        let n = rng.gen_range(1..=500u32);
        let steps: Vec<u64> = (0..len as u64).map(|k| k * 80).collect();
        let acc = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..len)
                .map(|_| rng.gen_range(0..=n) as f64 / n as f64)
                .collect()
        };
        let (wo, w) = (acc(&mut rng), acc(&mut rng));
        let d = DriftSeries::from_accuracies("m", "b", steps, wo, w).expect("series");
        for i in 0..d.len() {
            worst = worst.max((d.f_w[i] - (d.f_wo[i] + d.delta_tool[i])).abs());
            points += 1;
        }
    }
    // and series measured from records
    for pair in corpus.chunks(2).take(200) {
        let mut records = rows_to_records(&pair[0], 0);
        let second: Rows = (0..pair[0].len())
            .map(|i| pair[1][i % pair[1].len()])
            .collect();
        records.extend(rows_to_records(&second, 80));
        let d: DriftSeries<f64> =
            drift_series(&RecordSet::index(&records), "m", "b").expect("drift");
        for i in 0..d.len() {
            worst = worst.max((d.f_w[i] - (d.f_wo[i] + d.delta_tool[i])).abs());
            points += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{points} grid points, max error {worst:e}"),
    )
}

fn factor_identity(corpus: &[Rows]) -> Outcome {
    let mut checked = 0;
    let mut undefined = 0;
    let mut failures = 0;
    for rows in corpus {
        let records = rows_to_records(rows, 0);
        let s = slice(&records, &CheckpointKey::new("m", "b", 0)).expect("slice");
        let stats = cell_counts(&s).expect("counts");
        for cell in Cell::all() {
            let term = Rational::new(stats.count(cell) as i128, stats.n_total() as i128);
            match factorize::<Rational>(&stats, cell).product() {
                Some(p) => {
                    checked += 1;
                    if p != term {
                        failures += 1;
                    }
                }
                None => undefined += 1,
            }
        }
    }
    outcome(
        failures == 0 && checked > 0,
        format!("{checked} cells exact ({undefined} with undefined factors skipped), {failures} mismatches"),
    )
}

/// Model, per-benchmark accuracies (intrinsic, schema-only, tool), reported averages, reported gap.
type TableRow = (&'static str, [[i128; 6]; 3], [i128; 3], i128);

fn table_arithmetic() -> Outcome {
    // per-benchmark accuracies in tenths of a percent: intrinsic, schema-only, tool
    let models: [TableRow; 2] = [
        (
            "Qwen2.5-VL",
            [
                [780, 692, 649, 390, 164, 226],
                [743, 669, 616, 248, 146, 132],
                [749, 706, 625, 213, 127, 113],
            ],
            [484, 426, 422],
            -58,
        ),
        (
            "Qwen3-VL",
            [
                [827, 744, 710, 418, 235, 245],
                [571, 644, 568, 270, 168, 179],
                [901, 795, 724, 567, 377, 311],
            ],
            [530, 400, 612],
            -130,
        ),
    ];
    let tol = Rational::new(5, 100);
    let abs = |r: Rational| if r < Rational::from(0) { -r } else { r };
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, rows, reported, gap) in models {
        let means: Vec<Rational> = rows
            .iter()
            .map(|row| {
                let curves: Vec<Curve<Rational>> = row
                    .iter()
                    .map(|&v| Curve::new(vec![0], vec![Rational::new(v, 10)]).expect("curve"))
                    .collect();
                aggregate_direct(&curves).expect("mean").values[0]
            })
            .collect();
        for (m, r) in means.iter().zip(reported) {
            let diff = abs(*m - Rational::new(r, 10));
            pass &= diff <= tol;
        }
        let g = means[1] - means[0];
        pass &= abs(g - Rational::new(gap, 10)) <= tol;
        let show = |r: Rational| format!("{:.3}", *r.numer() as f64 / *r.denom() as f64);
        lines.push(format!(
            "{name}: {} / {} / {} gap {}",
            show(means[0]),
            show(means[1]),
            show(means[2]),
            show(g)
        ));
    }
    outcome(pass, lines.join("; "))
}

fn random_spec(rng: &mut ChaCha8Rng, seed: u64) -> SynthSpec {
    let steps = vec![0, 100, 200];
    let mut series = || -> Vec<f64> {
        (0..steps.len())
            .map(|_| rng.gen_range(0.05..0.95))
            .collect()
    };
    let mass_fail = series();
    let policy_call_fail = series();
    let policy_call_succ = series();
    let quality_gain_call = series();
    let quality_gain_nocall = series();
    let quality_harm_call = series();
    let quality_harm_nocall = series();
    SynthSpec {
        model: "synth".into(),
        benchmark: format!("b{seed}"),
        n_samples: 20_000,
        steps: steps.clone(),
        mass_fail,
        policy_call_fail,
        policy_call_succ,
        quality_gain_call,
        quality_gain_nocall,
        quality_harm_call,
        quality_harm_nocall,
        persistence: rng.gen_range(0.2..0.9),
        schema_accuracy: None,
        seed,
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let specs: Vec<SynthSpec> = (0..50).map(|i| random_spec(&mut rng, 1000 + i)).collect();
    let mut checks = 0usize;
    let mut violations = Vec::new();
    let mut worst = 0.0f64;
    for spec in &specs {
        let expected = expected_metrics(spec).expect("oracle");
        let records = generate(spec).expect("generate");
        let set = RecordSet::new(&records).expect("valid");
        let drift: DriftSeries<f64> =
            drift_series(&set, &spec.model, &spec.benchmark).expect("drift");
        let n = spec.n_samples as f64;
        let mut check = |what: String, got: f64, want: f64, se: f64| {
            checks += 1;
            let z = if se > 0.0 {
                (got - want).abs() / se
            } else if got == want {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            if z > 4.0 {
                violations.push(format!(
                    "{} {what}: got {got:.5} want {want:.5} z={z:.2}",
                    spec.benchmark
                ));
            }
        };
        for (k, e) in expected.steps.iter().enumerate() {
            let step = e.step;
            let binom = |p: f64, count: f64| (p * (1.0 - p) / count).sqrt();
            check(
                format!("acc_wo@{step}"),
                drift.acc_wo[k],
                e.acc_wo,
                binom(e.acc_wo, n),
            );
            check(
                format!("acc_w@{step}"),
                drift.acc_w[k],
                e.acc_w,
                binom(e.acc_w, n),
            );
            // per-sample contribution to G is in {-1, 0, 1}
            let second_moment = e.terms.gross_gain + e.terms.gross_harm;
            let g_se = ((second_moment - e.gap * e.gap) / n).sqrt();
            check(format!("G@{step}"), drift.gap[k], e.gap, g_se);

            let slice = set
                .slice(&CheckpointKey::new(&spec.model, &spec.benchmark, step))
                .expect("slice");
            let stats: PartitionStats = cell_counts(slice).expect("counts");
            let terms = decompose::<f64>(&stats);
            for (i, (got, want)) in terms.terms().iter().zip(e.terms.terms()).enumerate() {
                check(format!("T{}@{step}", i + 1), *got, want, binom(want, n));
            }
            for cell in Cell::all() {
                let est = factorize::<f64>(&stats, cell);
                let truth = e.factor(cell);
                let label = format!(
                    "{}/{}/{}@{step}",
                    cell.domain.as_str(),
                    cell.action.as_str(),
                    cell.verdict.as_str()
                );
                check(
                    format!("mass {label}"),
                    est.mass,
                    truth.mass,
                    binom(truth.mass, n),
                );
                let d = stats.domain_size(cell.domain) as f64;
                let a = stats.action_count(cell.domain, cell.action) as f64;
                if let (Some(p), Some(tp)) = (est.policy, truth.policy) {
                    check(format!("policy {label}"), p, tp, binom(tp, d));
                }
                if let (Some(q), Some(tq)) = (est.quality, truth.quality) {
                    check(format!("quality {label}"), q, tq, binom(tq, a));
                }
            }
            if step > 0 {
                let c = cohort_quality::<f64>(
                    &set,
                    &spec.model,
                    &spec.benchmark,
                    CohortKind::Persistent,
                    step,
                    10,
                )
                .expect("cohort");
                let want = e.cohort_quality(CohortKind::Persistent).expect("defined");
                if let Some(q) = c.quality {
                    check(
                        format!("persistent quality@{step}"),
                        q,
                        want,
                        binom(want, c.n_called as f64),
                    );
                }
            }
        }
    }
    let elapsed = start.elapsed();
    for v in violations.iter().take(10) {
        eprintln!("  {v}");
    }
    outcome(
        violations.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} specs, {checks} checks, {} beyond 4 SE, max |z| {worst:.2}, {:.1}s",
            specs.len(),
            violations.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn area_metrics() -> Outcome {
    let t = |v: &[f64]| v.to_vec();
    let mut errs = vec![
        // constant: |c| over [0, T]
        (abs_area(&t(&[0.0, 3.0, 10.0]), &t(&[-0.2, -0.2, -0.2])).unwrap() - 2.0).abs(),
        // linear: a T^2 / 2
        (abs_area(&t(&[0.0, 4.0]), &t(&[0.0, 0.5 * 4.0])).unwrap() - 4.0).abs(),
        // crossing triangle: f = t - 1 on [0, 2], no grid point at the crossing
        (abs_area(&t(&[0.0, 2.0]), &t(&[-1.0, 1.0])).unwrap() - 1.0).abs(),
        // crossing with unequal legs: f = t - 1 on [0, 4]: 1/2 + 9/2
        (abs_area(&t(&[0.0, 4.0]), &t(&[-1.0, 3.0])).unwrap() - 5.0).abs(),
    ];
    // tool areas of a crossing difference
    let s = AreaSummary::from_curves(&t(&[0.0, 2.0]), &t(&[0.0, 0.0]), &t(&[-1.0, 1.0])).unwrap();
    errs.push((s.b_tool_pos - 0.5).abs());
    errs.push((s.b_tool_neg - 0.5).abs());

    let big_t = 400.0;
    let times: Vec<f64> = (0..=5).map(|k| k as f64 * 80.0).collect();
    let f_wo: Vec<f64> = times.iter().map(|x| 0.1 * x / big_t).collect();
    let f_w: Vec<f64> = times.iter().map(|x| 0.15 * x / big_t).collect();
    let s = AreaSummary::from_curves(&times, &f_wo, &f_w).unwrap();
    let s_tool = s.s_tool.unwrap();
    errs.push((s_tool - 1.0 / 3.0).abs());

    let r = |n: i128, d: i128| Rational::new(n, d);
    let rt: Vec<Rational> = (0..=5).map(|k| r(k * 80, 1)).collect();
    let exact = AreaSummary::from_curves(
        &rt,
        &rt.iter()
            .map(|x| r(1, 10) * x / r(400, 1))
            .collect::<Vec<_>>(),
        &rt.iter()
            .map(|x| r(15, 100) * x / r(400, 1))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let exact_ok = exact.s_tool == Some(r(1, 3))
        && abs_area(&[r(0, 1), r(4, 1)], &[r(-1, 1), r(3, 1)]).unwrap() == r(5, 1);
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1e-12 && exact_ok,
        format!(
            "max error {worst:e}, S_tool {s_tool:.17}, exact rational {}",
            if exact_ok { "1/3" } else { "mismatch" }
        ),
    )
}

fn bootstrap_coverage() -> Outcome {
    let start = Instant::now();
    let trials = 500;
    let mean = |v: &[&bool]| Some(v.iter().filter(|b| ***b).count() as f64 / v.len() as f64);
    let run = |trial: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + trial);
        let data: Vec<bool> = (0..1000).map(|_| rng.gen_bool(0.5)).collect();
        let config = AggregationConfig {
            rng_seed: trial,
            ..Default::default()
        };
        bootstrap_ci(&data, mean, &config).expect("ci")
    };
    let covered = (0..trials).filter(|&t| {
        let ci = run(t);
        ci.lower <= 0.5 && 0.5 <= ci.upper
    });
    let covered = covered.count();
    let elapsed = start.elapsed();
    let (a, b) = (run(3), run(3));
    let deterministic =
        a.lower.to_bits() == b.lower.to_bits() && a.upper.to_bits() == b.upper.to_bits();
    let rate = covered as f64 / trials as f64;
    outcome(
        rate >= 0.93 && deterministic && elapsed < Duration::from_secs(30),
        format!(
            "coverage {covered}/{trials} = {:.1}%, deterministic {deterministic}, {:.1}s",
            rate * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn normalization_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = 0;
    let cases = 2000;
    for _ in 0..cases {
        let len = rng.gen_range(2..12);
        let curve = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.4..0.4)).collect();
            v[0] = 0.0;
            v
        };
        let (f_wo, f_w) = (curve(&mut rng), curve(&mut rng));
        for f in [&f_wo, &f_w] {
            let n = normalize_drift(f);
            let max = n.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if f.iter().any(|v| *v != 0.0) && max != 1.0 {
                failures += 1;
            }
        }
        let (a, b) = normalize_pair(&f_wo, &f_w);
        let joint_max = a
            .values
            .iter()
            .chain(&b.values)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if joint_max != 1.0 {
            failures += 1;
        }
        for i in 0..len {
            let raw = f_w[i] - f_wo[i];
            let scaled = b.values[i] - a.values[i];
            if raw.signum() != scaled.signum() && raw != 0.0 {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{cases} random pairs, {failures} violations"),
    )
}

fn write_config(dir: &Path, records: &Path) {
    let spec = |model: &str, bench: &str, seed: u64| {
        format!(
            "[[synth]]\nmodel = \"{model}\"\nbenchmark = \"{bench}\"\nn_samples = 400\nsteps = [0, 50, 100, 150]\n\
             mass_fail = [0.6, 0.55, 0.5, 0.45]\npolicy_call_fail = [0.3, 0.4, 0.5, 0.6]\npolicy_call_succ = [0.2, 0.3, 0.35, 0.4]\n\
             quality_gain_call = [0.3, 0.35, 0.4, 0.45]\nquality_gain_nocall = [0.1, 0.1, 0.1, 0.1]\n\
             quality_harm_call = [0.15, 0.12, 0.1, 0.08]\nquality_harm_nocall = [0.05, 0.05, 0.05, 0.05]\n\
             persistence = 0.6\nschema_accuracy = 0.35\nseed = {seed}\n"
        )
    };
    let text = format!(
        "inputs = [\"{}\"]\n[aggregation]\nbootstrap_resamples = 300\nrng_seed = 11\n\n{}\n{}\n{}",
        records.display(),
        spec("a", "x", 1),
        spec("a", "y", 2),
        spec("b", "x", 3)
    );
    std::fs::write(dir.join("config.toml"), text).expect("config");
}

fn read_bundle(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("bundle dir")
        .map(|e| e.expect("entry").path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn end_to_end_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_medkit");
    let tmp = tempfile::tempdir().expect("tempdir");
    let records = tmp.path().join("data").join("records.jsonl");
    write_config(tmp.path(), &records);
    let config = tmp.path().join("config.toml");
    let status = Command::new(bin)
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("data"))
        .env_remove("MEDKIT_SEED")
        .status()
        .expect("run synth");
    if !status.success() {
        return outcome(false, format!("synth exited with {status}"));
    }
    let mut bundles = Vec::new();
    for run in ["run1", "run2"] {
        let status = Command::new(bin)
            .args(["report", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join(run))
            .env_remove("MEDKIT_SEED")
            .status()
            .expect("run report");
        if !status.success() {
            return outcome(false, format!("report exited with {status}"));
        }
        bundles.push(read_bundle(&tmp.path().join(run)));
    }
    let identical = bundles[0] == bundles[1];
    let bytes: usize = bundles[0].iter().map(|(_, b)| b.len()).sum();
    outcome(
        identical && bundles[0].len() > 2,
        format!(
            "{} files, {bytes} bytes, identical {identical}",
            bundles[0].len()
        ),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let corpus = corpus();
    let criteria: Vec<Criterion<'_>> = vec![
        (
            "decomposition identity",
            Box::new(|| decomposition_identity(&corpus)),
        ),
        ("drift identity", Box::new(|| drift_identity(&corpus))),
        (
            "factor product identity",
            Box::new(|| factor_identity(&corpus)),
        ),
        ("published table arithmetic", Box::new(table_arithmetic)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("area metrics", Box::new(area_metrics)),
        ("bootstrap coverage", Box::new(bootstrap_coverage)),
        ("normalization contract", Box::new(normalization_contract)),
        ("end-to-end determinism", Box::new(end_to_end_determinism)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let o = check();
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
