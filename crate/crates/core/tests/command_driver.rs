//! The process-backed driver, exercised against the toy compiler run as an
//! external program through `stepscan testbed-run`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use stepscan::config::load_driver;
use stepscan::driver::CachedDriver;
use stepscan::isolation::{isolate, Strategy};
use stepscan::model::Outcome;
use stepscan::scoring::{report_for, ScoringOptions};
use stepscan::testbed::{generate_scenarios, BugKind, TestbedDriver};

fn generate(dir: &Path, count: usize) {
    let st = Command::new(env!("CARGO_BIN_EXE_stepscan"))
        .args(["testbed-gen", "--seed", "11", "--count", &count.to_string(), "--command-driver", "--output"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
}

#[test]
fn command_driver_matches_in_process_driver() {
    let dir = tempfile::tempdir().unwrap();
    let count = 9;
    generate(dir.path(), count);
    for bug in generate_scenarios(11, count).unwrap() {
        let cfg = dir.path().join("configs").join(format!("{}.json", bug.id));
        let raw: serde_json::Value = serde_json::from_slice(&fs::read(&cfg).unwrap()).unwrap();
        assert_eq!(raw["driver"], "command");

        let external = CachedDriver::in_memory(load_driver(&cfg).unwrap());
        let internal = CachedDriver::in_memory(Arc::new(TestbedDriver::new(bug.clone())));
        assert_eq!(external.enumerate_steps().unwrap().ids(), bug.step_ids());

        let full = bug.step_ids();
        let (e, i) = (external.execute(&full).unwrap(), internal.execute(&full).unwrap());
        assert_eq!(e.outcome, i.outcome, "{}", bug.id);
        assert_eq!(e.coverage, i.coverage, "{}", bug.id);
        if bug.kind == BugKind::StaleState {
            assert_eq!(e.outcome, Outcome::FailWrongOutput);
        }
        assert_eq!(external.execute(&[]).unwrap().outcome, Outcome::Pass);

        let re = isolate(&external, Strategy::TailPrune, 2).unwrap();
        let ri = isolate(&internal, Strategy::TailPrune, 1).unwrap();
        assert_eq!(re.bug_causing(), ri.bug_causing(), "{}", bug.id);
        assert_eq!(re.probe_count, ri.probe_count);
        let opts = ScoringOptions::default();
        let (a, b) = (report_for(&re, opts, "").unwrap(), report_for(&ri, opts, "").unwrap());
        assert_eq!(a.rows, b.rows, "{}", bug.id);
    }
}

#[test]
fn crashing_compiler_is_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    // Template order puts the instcombine crash at index 5.
    generate(dir.path(), 6);
    let bug = &generate_scenarios(11, 6).unwrap()[5];
    assert_eq!(bug.kind, BugKind::Crash);
    let cfg = dir.path().join("configs").join(format!("{}.json", bug.id));
    let d = CachedDriver::in_memory(load_driver(&cfg).unwrap());
    let r = d.execute(&bug.step_ids()).unwrap();
    assert_eq!(r.outcome, Outcome::FailCrash);
}
