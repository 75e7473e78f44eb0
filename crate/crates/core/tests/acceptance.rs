//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line.
//!
//! Run with `cargo test -p stepscan --test acceptance -- --test-threads=1`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use flate2::write::GzEncoder;
use flate2::Compression;
use stepscan::coverage::{emit_native_json, parse_gcov_json, parse_native_json};
use stepscan::driver::CachedDriver;
use stepscan::isolation::{isolate, IsolationResult, Strategy};
use stepscan::model::{CoverageSet, ExecutionResult, Outcome, RemovalProbe, StatementId};
use stepscan::scoring::{
    aggregate_ranksum, ochiai, ranksum_weights, report_for, score_compscan, score_metallaxis, score_ochiai,
    Granularity, Scorer, ScoringOptions, SuspiciousnessMap,
};
use stepscan::testbed::{generate_scenarios, BugKind, SeededBug, TestbedDriver};

/// Writes straight to stderr so the line shows even when output is captured.
fn verdict(id: &str, pass: bool, detail: String) {
    let line = format!("[{}] {id}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{id} failed: {detail}");
}

fn driver(bug: &SeededBug) -> CachedDriver {
    CachedDriver::in_memory(Arc::new(TestbedDriver::new(bug.clone())))
}

fn hundred() -> &'static Vec<SeededBug> {
    static S: OnceLock<Vec<SeededBug>> = OnceLock::new();
    S.get_or_init(|| generate_scenarios(2024, 100).expect("scenarios generate"))
}

fn suite30() -> &'static Vec<SeededBug> {
    static S: OnceLock<Vec<SeededBug>> = OnceLock::new();
    S.get_or_init(|| generate_scenarios(42, 30).expect("scenarios generate"))
}

fn pos_mask(bug: &SeededBug, ids: &[String]) -> u32 {
    let all = bug.step_ids();
    ids.iter().fold(0, |m, id| m | 1 << all.iter().position(|s| s == id).unwrap())
}

fn passes_of(bug: &SeededBug, mask: u32) -> Vec<stepscan::testbed::passes::PassKind> {
    (0..bug.pipeline.len()).filter(|i| mask & (1 << i) != 0).map(|i| bug.pipeline[i]).collect()
}

/// All 1-minimal failing subsets, by exhaustive enumeration.
fn one_minimal_sets(bug: &SeededBug) -> BTreeSet<u32> {
    let n = bug.pipeline.len();
    let fails: Vec<bool> = (0u32..1 << n).map(|m| bug.outcome_with(&passes_of(bug, m)).is_fail()).collect();
    (0u32..1 << n)
        .filter(|&m| fails[m as usize] && (0..n).filter(|i| m & (1 << i) != 0).all(|i| !fails[(m & !(1 << i)) as usize]))
        .collect()
}

#[test]
fn c01_one_minimality() {
    let start = Instant::now();
    let mut bad = Vec::new();
    for bug in hundred() {
        let d = driver(bug);
        let r = isolate(&d, Strategy::TailPrune, 1).unwrap();
        let fin = r.final_sequence.clone().unwrap();
        let direct_ok = d.execute(&fin).unwrap().outcome.is_fail()
            && (0..fin.len()).all(|i| {
                let mut s = fin.clone();
                s.remove(i);
                d.execute(&s).unwrap().outcome == Outcome::Pass
            });
        let oracle_ok = one_minimal_sets(bug).contains(&pos_mask(bug, &fin));
        if !(direct_ok && oracle_ok) {
            bad.push(bug.id.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C1 1-minimality",
        bad.is_empty() && secs < 60.0,
        format!("{}/100 scenarios 1-minimal (oracle-checked), {secs:.1}s; failures {bad:?}", 100 - bad.len()),
    );
}

#[test]
fn c02_bug_causing_agreement() {
    let mut bad = Vec::new();
    for bug in hundred() {
        let d = driver(bug);
        let expected = bug.trigger_steps();
        let mut sets = vec![
            ("tail".to_string(), isolate(&d, Strategy::TailPrune, 1).unwrap().bug_causing()),
            ("nodel".to_string(), isolate(&d, Strategy::NoDel, 4).unwrap().bug_causing()),
        ];
        for seed in 0..10 {
            sets.push((format!("rand{seed}"), isolate(&d, Strategy::Rand { seed }, 1).unwrap().bug_causing()));
        }
        if sets.iter().any(|(_, s)| *s != expected) {
            bad.push((bug.id.clone(), sets.into_iter().filter(|(_, s)| *s != expected).map(|(n, _)| n).collect::<Vec<_>>()));
        }
    }
    verdict(
        "C2 bug-causing agreement",
        bad.is_empty(),
        format!("{}/100 scenarios agree across tail, nodel and rand x10; disagreements {bad:?}", 100 - bad.len()),
    );
}

fn sid(f: &str, l: u32) -> StatementId {
    StatementId::new(f, l, Some("f")).unwrap()
}

fn probe(step: &str, diff: &[StatementId], flipped: bool) -> RemovalProbe {
    let base = Arc::new(ExecutionResult {
        subset: vec![step.into(), "rest".into()],
        outcome: Outcome::FailWrongOutput,
        coverage: diff.iter().cloned().collect(),
        wall_time: 0.0,
    });
    let p = Arc::new(ExecutionResult {
        subset: vec!["rest".into()],
        outcome: if flipped { Outcome::Pass } else { Outcome::FailWrongOutput },
        coverage: CoverageSet::new(),
        wall_time: 0.0,
    });
    RemovalProbe::new(step, base, p).unwrap()
}

#[test]
fn c03_scorer_hand_checks() {
    let tol = 1e-9;
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    let (a, b, c, d, e) = (sid("f", 1), sid("f", 2), sid("f", 3), sid("f", 4), sid("g", 1));
    let cs = score_compscan(&[
        probe("m1", &[a.clone(), b.clone(), c.clone(), d.clone()], true),
        probe("m2", &[a.clone(), e.clone()], true),
        probe("m3", &[sid("z", 1)], false),
    ]);
    checks.push(("compscan S(a)", cs.get(&a), 0.5));
    checks.push(("compscan S(b)", cs.get(&b), 0.25));
    checks.push(("compscan S(e)", cs.get(&e), 0.5));
    checks.push(("compscan unflipped absent", cs.scores.contains_key(&sid("z", 1)) as u8 as f64, 0.0));
    checks.push(("compscan |diff|=1", score_compscan(&[probe("m", &[a.clone()], true)]).get(&a), 1.0));
    let mb = score_metallaxis(&[probe("m1", &[a.clone(), b.clone(), c.clone(), d.clone()], true)]);
    checks.push(("metallaxis S(d)", mb.get(&d), 1.0));
    let runs = vec![
        Arc::new(ExecutionResult { subset: vec!["x".into()], outcome: Outcome::FailWrongOutput, coverage: [a.clone(), b.clone()].into_iter().collect(), wall_time: 0.0 }),
        Arc::new(ExecutionResult { subset: vec![], outcome: Outcome::Pass, coverage: [b.clone()].into_iter().collect(), wall_time: 0.0 }),
    ];
    let och = score_ochiai(&runs).unwrap();
    checks.push(("ochiai(a)", och.get(&a), 1.0));
    checks.push(("ochiai(b)", och.get(&b), std::f64::consts::FRAC_1_SQRT_2));
    checks.push(("ochiai 2f/2p", ochiai(2, 1, 2), 2.0 / 6f64.sqrt()));
    let w = ranksum_weights(3);
    checks.push(("w1", w[0], 0.5));
    checks.push(("w2", w[1], 2.0 / 6.0));
    checks.push(("w3", w[2], 1.0 / 6.0));
    let mut m = SuspiciousnessMap::default();
    m.scores.insert(sid("f.c", 1), 0.5);
    m.scores.insert(sid("f.c", 2), 0.25);
    let file = aggregate_ranksum(&m, Granularity::File, None).unwrap();
    checks.push(("file score", file.rows[0].score, 5.0 / 12.0));
    let mut m = SuspiciousnessMap::default();
    m.scores.insert(sid("A", 1), 1.0);
    for l in 1..=3 {
        m.scores.insert(sid("B", l), 0.5);
    }
    let two = aggregate_ranksum(&m, Granularity::File, None).unwrap();
    checks.push(("two files A", two.rows[0].score, 1.0));
    checks.push(("two files B", two.rows[1].score, 0.5));
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > tol)
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    let rounded_ok = (file.rows[0].score - 0.41667).abs() < 1e-5 && (ochiai(2, 1, 2) - 0.8165).abs() < 1e-4;
    verdict(
        "C3 scorer hand-checks",
        bad.is_empty() && rounded_ok && two.rows[0].unit == "A",
        format!("{}/{} worked examples within 1e-9; mismatches {bad:?}", checks.len() - bad.len(), checks.len()),
    );
}

struct SuiteRun {
    bug: SeededBug,
    results: BTreeMap<&'static str, IsolationResult>,
    fingerprint: String,
}

fn suite_runs() -> &'static Vec<SuiteRun> {
    static S: OnceLock<Vec<SuiteRun>> = OnceLock::new();
    S.get_or_init(|| {
        suite30()
            .iter()
            .map(|bug| {
                let d = driver(bug);
                let mut results = BTreeMap::new();
                results.insert("tail", isolate(&d, Strategy::TailPrune, 1).unwrap());
                results.insert("nodel", isolate(&d, Strategy::NoDel, 1).unwrap());
                SuiteRun { bug: bug.clone(), results, fingerprint: d.fingerprint().to_string() }
            })
            .collect()
    })
}

/// First rank of the bug's ground-truth file, worst-rank ties, sentinel
/// rank for a missing file.
fn first_rank(run: &SuiteRun, strategy: &str, scorer: Scorer) -> usize {
    let opts = ScoringOptions { scorer, ..ScoringOptions::default() };
    let report = report_for(&run.results[strategy], opts, &run.fingerprint).unwrap();
    run.bug
        .ground_truth_files()
        .iter()
        .map(|f| report.rank_of(f).unwrap_or(report.rows.len() + 1))
        .min()
        .unwrap()
}

fn mfr(strategy: &str, scorer: Scorer) -> (f64, Vec<usize>) {
    let ranks: Vec<usize> = suite_runs().iter().map(|r| first_rank(r, strategy, scorer)).collect();
    (ranks.iter().sum::<usize>() as f64 / ranks.len() as f64, ranks)
}

#[test]
fn c04_seeded_bug_isolation_quality() {
    let start = Instant::now();
    let runs = suite_runs();
    let in_candidates = runs
        .iter()
        .filter(|r| {
            let files: BTreeSet<String> = r.results["tail"].probes.iter().flat_map(|p| p.diff.iter().map(|s| s.file.clone())).collect();
            r.bug.ground_truth_files().iter().any(|f| files.contains(f))
        })
        .count();
    let (mfr_default, ranks) = mfr("tail", Scorer::Compscan);
    let (mfr_mbfl, _) = mfr("tail", Scorer::Mbfl);
    let top3 = ranks.iter().filter(|&&r| r <= 3).count();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C4 seeded-bug isolation quality",
        in_candidates == 30 && top3 * 10 >= 30 * 8 && mfr_default < mfr_mbfl && secs < 120.0,
        format!(
            "candidate set {in_candidates}/30, Top-3 {top3}/30, MFR compscan {mfr_default:.3} vs mbfl {mfr_mbfl:.3}, {secs:.1}s; ranks {ranks:?}"
        ),
    );
}

#[test]
fn c05_ablation_direction() {
    let (tail_cs, _) = mfr("tail", Scorer::Compscan);
    let (tail_sbfl, _) = mfr("tail", Scorer::Sbfl);
    let (nodel_cs, _) = mfr("nodel", Scorer::Compscan);
    verdict(
        "C5 ablation direction",
        tail_cs <= tail_sbfl && tail_cs <= nodel_cs,
        format!("MFR compscan {tail_cs:.3} <= sbfl {tail_sbfl:.3}; tail {tail_cs:.3} <= nodel {nodel_cs:.3}"),
    );
}

/// Steps after the last bug-causing step.
fn trailing_irrelevant(bug: &SeededBug) -> usize {
    let ids = bug.step_ids();
    let last = bug.trigger_steps().last().cloned().unwrap();
    ids.len() - 1 - ids.iter().position(|s| *s == last).unwrap()
}

#[test]
fn c06_noise_reduction() {
    let mut violations = Vec::new();
    let (mut eligible, mut strictly) = (0, 0);
    for bug in hundred() {
        let d = driver(bug);
        let tail = isolate(&d, Strategy::TailPrune, 1).unwrap();
        let nodel = isolate(&d, Strategy::NoDel, 1).unwrap();
        let mut smaller = false;
        for p in &tail.probes {
            let Some(q) = nodel.probes.iter().find(|q| q.removed_step == p.removed_step) else {
                violations.push(format!("{}:{} missing under nodel", bug.id, p.removed_step));
                continue;
            };
            if !p.diff.is_subset(&q.diff) {
                let extra: Vec<String> = p.diff.difference(&q.diff).map(|s| s.to_string()).collect();
                violations.push(format!("{}:{} +{extra:?}", bug.id, p.removed_step));
            }
            smaller |= p.diff.len() < q.diff.len();
        }
        if trailing_irrelevant(bug) >= 2 {
            eligible += 1;
            strictly += smaller as usize;
        }
    }
    verdict(
        "C6 noise reduction",
        violations.is_empty() && strictly * 2 >= eligible,
        format!(
            "subset violations {} ; strictly smaller in {strictly}/{eligible} scenarios with >= 2 trailing steps; first violations {:?}",
            violations.len(),
            violations.iter().take(5).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c07_determinism() {
    let bin = env!("CARGO_BIN_EXE_stepscan");
    let dir = tempfile::tempdir().unwrap();
    let gen = Command::new(bin)
        .args(["testbed-gen", "--seed", "42", "--count", "12", "--output"])
        .arg(dir.path().join("tb"))
        .output()
        .unwrap();
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let manifest = dir.path().join("tb/manifest.json");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let st = Command::new(bin)
            .args(["eval", "--strategy", "tail,nodel,rand", "--scorer", "compscan,mbfl,sbfl", "--seed", "9", "--jobs", "4", "--repeat", "3", "--format", "json", "--output"])
            .arg(&out)
            .arg(&manifest)
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.json"), run("b.json"));
    verdict(
        "C7 determinism",
        a == b && !a.is_empty(),
        format!("two eval runs produced {} and {} bytes, identical = {}", a.len(), b.len(), a == b),
    );
}

#[test]
fn c08_probe_efficiency() {
    let mut over_bound = Vec::new();
    let mut not_cheaper = Vec::new();
    let mut checked = 0;
    let mut fewer_distinct = 0;
    for bug in hundred() {
        let d = driver(bug);
        let r = isolate(&d, Strategy::TailPrune, 1).unwrap();
        let (n, k) = (bug.pipeline.len(), r.probes.len());
        let log2 = (n as f64).log2().ceil() as usize;
        if r.probe_count > 4 * (k + 1) * (log2 + 1) {
            over_bound.push(format!("{} n={n} k={k} runs={}", bug.id, r.probe_count));
        }
        if n >= 8 && k <= 2 {
            checked += 1;
            if r.probe_count >= n {
                not_cheaper.push(format!("{} n={n} k={k} runs={}", bug.id, r.probe_count));
            }
            // Distinct compiler invocations after the baseline, for context.
            fewer_distinct += (d.run_count() - 1 < n) as usize;
        }
    }
    verdict(
        "C8 probe efficiency",
        over_bound.is_empty() && not_cheaper.is_empty(),
        format!(
            "bound violations {:?}; not cheaper than n single-step probes in {}/{checked} cases with n >= 8, k <= 2 (distinct runs fewer than n in {fewer_distinct}/{checked}): {:?}",
            over_bound,
            not_cheaper.len(),
            not_cheaper
        ),
    );
}

#[test]
fn c09_coverage_parsing() {
    let gcov = r#"{"current_working_directory":"/src","files":[
        {"file":"lib/a.c","lines":[{"line_number":5,"count":0,"function_name":"g"},{"line_number":6,"count":3,"function_name":"g"},{"line_number":9,"count":1,"function_name":"h"}]},
        {"file":"lib/b.c","lines":[{"line_number":3,"count":0,"function_name":"k"},{"line_number":3,"count":2,"function_name":"k"}]}]}"#;
    let expected: CoverageSet = [
        StatementId::new("lib/a.c", 6, Some("g")).unwrap(),
        StatementId::new("lib/a.c", 9, Some("h")).unwrap(),
        StatementId::new("lib/b.c", 3, Some("k")).unwrap(),
    ]
    .into_iter()
    .collect();
    let plain = parse_gcov_json(gcov.as_bytes(), Some("/src")).unwrap();
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(gcov.as_bytes()).unwrap();
    let gz = parse_gcov_json(&enc.finish().unwrap(), Some("/src")).unwrap();
    let native = parse_native_json(emit_native_json(&plain).as_bytes()).unwrap();
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(emit_native_json(&plain).as_bytes()).unwrap();
    let native_gz = parse_native_json(&enc.finish().unwrap()).unwrap();
    let ok = plain == expected && gz == expected && native == expected && native_gz == expected
        && emit_native_json(&native) == emit_native_json(&plain);
    verdict(
        "C9 coverage parsing",
        ok,
        format!("gcov {} / gzip {} / native {} / native gzip {} statements, expected {}", plain.len(), gz.len(), native.len(), native_gz.len(), expected.len()),
    );
}

#[test]
fn c10_interaction_bug_fidelity() {
    let mut total = 0;
    let mut structure_ok = 0;
    let mut ranked_above = 0;
    let mut detail = Vec::new();
    for bug in hundred().iter().filter(|b| b.kind == BugKind::StaleState) {
        total += 1;
        let d = driver(bug);
        let r = isolate(&d, Strategy::TailPrune, 1).unwrap();
        let steps = r.bug_causing();
        let files: Vec<&str> = steps
            .iter()
            .map(|s| {
                let kind: stepscan::testbed::passes::PassKind = s.split('#').next().unwrap().parse().unwrap();
                kind.virtual_file()
            })
            .collect();
        let truth = bug.ground_truth_files();
        if steps.len() == 2 && truth.contains(files[0]) {
            structure_ok += 1;
        }
        let report = report_for(&r, ScoringOptions::default(), d.fingerprint()).unwrap();
        let rank = |f: &str| report.rank_of(f).unwrap_or(report.rows.len() + 1);
        if files.len() == 2 && rank(files[0]) < rank(files[1]) {
            ranked_above += 1;
        } else if files.len() == 2 {
            let diff_sizes: Vec<usize> = r.probes.iter().map(|p| p.diff.len()).collect();
            detail.push(format!("{} ranks {}/{} diffs {diff_sizes:?}", bug.id, rank(files[0]), rank(files[1])));
        }
    }
    verdict(
        "C10 interaction-bug fidelity",
        total > 0 && structure_ok == total && ranked_above * 10 >= total * 7,
        format!(
            "{structure_ok}/{total} stale-state scenarios isolate exactly two steps with truth in the earlier one; earlier file ranked above later in {ranked_above}/{total}; misses {:?}",
            detail.iter().take(6).collect::<Vec<_>>()
        ),
    );
}
