//! In-process driver over a seeded-bug scenario. Step ids are the
//! scenario's pipeline positions, so the isolation engine sees the toy
//! compiler exactly as it would an external one.

use super::passes::run_pipeline;
use super::scenario::{classify, SeededBug};
use crate::driver::{sha256_hex, Driver, DriverError};
use crate::model::{ExecutionResult, StepSequence};

/// Simulated cost model: wall time is a deterministic function of the run
/// so that evaluation output is reproducible byte for byte.
const SECONDS_PER_STEP: f64 = 0.01;
const SECONDS_PER_STATEMENT: f64 = 1e-4;

pub struct TestbedDriver {
    bug: SeededBug,
    ids: Vec<String>,
    fingerprint: String,
}

impl TestbedDriver {
    pub fn new(bug: SeededBug) -> Self {
        let json = serde_json::to_vec(&bug).expect("scenario serializes");
        TestbedDriver {
            ids: bug.step_ids(),
            fingerprint: sha256_hex(&[b"testbed", &json]),
            bug,
        }
    }

    pub fn bug(&self) -> &SeededBug {
        &self.bug
    }
}

impl Driver for TestbedDriver {
    fn enumerate_steps(&self) -> Result<StepSequence, DriverError> {
        if self.ids.is_empty() {
            return Err(DriverError::EmptySequence);
        }
        let steps = self
            .bug
            .pipeline
            .iter()
            .zip(&self.ids)
            .enumerate()
            .map(|(i, (kind, id))| crate::model::Step::new(id.as_str(), kind.name(), i))
            .collect();
        Ok(StepSequence::new(steps)?)
    }

    fn run(&self, subset: &[String]) -> Result<ExecutionResult, DriverError> {
        let mut passes = Vec::with_capacity(subset.len());
        let mut next = 0;
        for id in subset {
            let pos = self.ids[next..]
                .iter()
                .position(|s| s == id)
                .map(|p| p + next)
                .ok_or_else(|| DriverError::NotSubsequence(subset.to_vec()))?;
            passes.push(self.bug.pipeline[pos]);
            next = pos + 1;
        }
        let out = run_pipeline(&self.bug.program, &passes, Some(self.bug.defect), true);
        let outcome = classify(&out.result, &self.bug.expected_output);
        let wall_time = SECONDS_PER_STEP * passes.len() as f64 + SECONDS_PER_STATEMENT * out.coverage.len() as f64;
        Ok(ExecutionResult {
            subset: subset.to_vec(),
            outcome,
            coverage: out.coverage,
            wall_time,
        })
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::CachedDriver;
    use crate::model::Outcome;
    use crate::testbed::scenario::named_scenario;
    use std::sync::Arc;

    #[test]
    fn empty_subset_passes_and_full_fails() {
        let d = TestbedDriver::new(named_scenario("CF-neg-fold").unwrap());
        let full = d.enumerate_steps().unwrap().ids();
        assert_eq!(full.len(), 6);
        let r = d.run(&full).unwrap();
        assert_eq!(r.outcome, Outcome::FailWrongOutput);
        assert!(!r.coverage.is_empty());
        assert_eq!(d.run(&[]).unwrap().outcome, Outcome::Pass);
        assert!(d.run(&[full[1].clone(), full[0].clone()]).is_err());
    }

    #[test]
    fn cache_serves_repeats() {
        let d = CachedDriver::in_memory(Arc::new(TestbedDriver::new(named_scenario("DCE-neg-use").unwrap())));
        let full = d.enumerate_steps().unwrap().ids();
        let a = d.execute(&full).unwrap();
        let b = d.execute(&full).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outcome, Outcome::FailCrash);
        assert_eq!(d.run_count(), 1);
    }
}
