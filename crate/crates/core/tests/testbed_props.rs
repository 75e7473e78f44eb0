use std::sync::Arc;

use stepscan::driver::CachedDriver;
use stepscan::isolation::{isolate, Strategy};
use stepscan::testbed::{generate_scenarios, TestbedDriver};

/// Per-statement fault frequency in flipped probe diffs falls as the diff
/// grows: small diffs are more informative per statement.
#[test]
fn fault_frequency_falls_with_diff_size() {
    let mut samples: Vec<(usize, f64)> = Vec::new();
    for bug in generate_scenarios(77, 60).unwrap() {
        let d = CachedDriver::in_memory(Arc::new(TestbedDriver::new(bug.clone())));
        for strategy in [Strategy::TailPrune, Strategy::NoDel] {
            for p in isolate(&d, strategy, 1).unwrap().probes {
                let faulty = p.diff.intersection(&bug.ground_truth).count();
                samples.push((p.diff.len(), faulty as f64 / p.diff.len() as f64));
            }
        }
    }
    samples.sort_by_key(|s| s.0);
    let half = samples.len() / 2;
    let mean = |xs: &[(usize, f64)]| xs.iter().map(|x| x.1).sum::<f64>() / xs.len() as f64;
    let (small, large) = (mean(&samples[..half]), mean(&samples[half..]));
    assert!(small > large, "small diffs {small:.4} vs large diffs {large:.4}");
}

#[test]
fn every_scenario_reproduces_and_clears() {
    for bug in generate_scenarios(5, 45).unwrap() {
        assert!(bug.outcome_with(&bug.pipeline).is_fail(), "{}", bug.id);
        let rest: Vec<_> = bug.pipeline.iter().copied().filter(|p| !bug.trigger_passes.contains(p)).collect();
        assert!(!bug.outcome_with(&rest).is_fail(), "{}", bug.id);
    }
}
