//! Bug-causing step identification: tail step pruning and the two ablation
//! strategies (no deletion, random visiting order).

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{CachedDriver, DriverError};
use crate::model::{CoverageSet, ExecutionResult, ModelError, Outcome, RemovalProbe, StatementId, StepSequence};

#[derive(Debug, Error)]
pub enum IsolationError {
    #[error("the full step sequence passes; the failure does not reproduce")]
    NotReproducible,
    #[error("retained sequence {0:?} was known to fail but now passes")]
    InconsistentOracle(Vec<String>),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    TailPrune,
    NoDel,
    Rand { seed: u64 },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::TailPrune => f.write_str("tail"),
            Strategy::NoDel => f.write_str("nodel"),
            Strategy::Rand { seed } => write!(f, "rand(seed={seed})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsolationResult {
    pub strategy: Strategy,
    pub sequence: StepSequence,
    pub baseline: Arc<ExecutionResult>,
    /// Flipped probes, one per bug-causing step, in step order.
    pub probes: Vec<RemovalProbe>,
    /// Steps still retained when the strategy finished. `None` for NoDel,
    /// which never deletes.
    pub final_sequence: Option<Vec<String>>,
    /// Executions issued after the baseline, cache hits included.
    pub probe_count: usize,
    /// Every distinct run observed, the baseline first.
    pub all_runs: Vec<Arc<ExecutionResult>>,
}

impl IsolationResult {
    pub fn bug_causing(&self) -> Vec<String> {
        self.probes.iter().map(|p| p.removed_step.clone()).collect()
    }

    /// No step's removal made the failure go away.
    pub fn is_fallback(&self) -> bool {
        self.probes.is_empty()
    }
}

/// Runs the full sequence and checks that it fails.
pub fn verify_baseline(driver: &CachedDriver, sequence: &StepSequence) -> Result<Arc<ExecutionResult>, IsolationError> {
    let run = driver.execute(&sequence.ids())?;
    if !run.outcome.is_fail() {
        return Err(IsolationError::NotReproducible);
    }
    Ok(run)
}

/// Enumerates steps, verifies the baseline and runs `strategy`.
pub fn isolate(driver: &CachedDriver, strategy: Strategy, jobs: usize) -> Result<IsolationResult, IsolationError> {
    let sequence = driver.enumerate_steps()?;
    let baseline = verify_baseline(driver, &sequence)?;
    match strategy {
        Strategy::TailPrune => tail_prune(driver, &sequence, baseline),
        Strategy::NoDel => no_del(driver, &sequence, baseline, jobs),
        Strategy::Rand { seed } => rand_order(driver, &sequence, baseline, seed),
    }
}

/// Bookkeeping shared by the deleting strategies.
struct Session<'a> {
    driver: &'a CachedDriver,
    retained: Vec<String>,
    current: Arc<ExecutionResult>,
    probes: Vec<RemovalProbe>,
    executions: usize,
    runs: Vec<Arc<ExecutionResult>>,
    seen: HashSet<Vec<String>>,
}

impl<'a> Session<'a> {
    fn new(driver: &'a CachedDriver, baseline: Arc<ExecutionResult>) -> Self {
        let mut s = Session {
            driver,
            retained: baseline.subset.clone(),
            current: baseline.clone(),
            probes: Vec::new(),
            executions: 0,
            runs: Vec::new(),
            seen: HashSet::new(),
        };
        s.observe(baseline);
        s
    }

    fn observe(&mut self, run: Arc<ExecutionResult>) {
        if self.seen.insert(run.subset.clone()) {
            self.runs.push(run);
        }
    }

    fn execute(&mut self, subset: &[String]) -> Result<Arc<ExecutionResult>, IsolationError> {
        self.executions += 1;
        let run = self.driver.execute(subset)?;
        self.observe(run.clone());
        Ok(run)
    }

    /// Tries removing `chunk` from the retained steps. A still-failing run
    /// deletes the chunk; a passing single-step removal pins the step.
    /// Returns whether the removal passed.
    fn try_remove(&mut self, chunk: &[String]) -> Result<bool, IsolationError> {
        let drop: HashSet<&String> = chunk.iter().collect();
        let test: Vec<String> = self.retained.iter().filter(|s| !drop.contains(s)).cloned().collect();
        let run = self.execute(&test)?;
        if run.outcome.is_fail() {
            log::debug!("deleted {chunk:?} ({} steps retained)", test.len());
            self.retained = test;
            self.current = run;
            return Ok(false);
        }
        if let [step] = chunk {
            log::debug!("pinned {step}");
            self.probes.push(RemovalProbe::new(step, self.current.clone(), run)?);
        }
        Ok(true)
    }

    fn finish(mut self, strategy: Strategy, sequence: &StepSequence, baseline: Arc<ExecutionResult>) -> Result<IsolationResult, IsolationError> {
        if self.current.subset != self.retained || !self.current.outcome.is_fail() {
            return Err(IsolationError::InconsistentOracle(self.retained));
        }
        self.probes.sort_by_key(|p| sequence.ordinal_of(&p.removed_step));
        Ok(IsolationResult {
            strategy,
            sequence: sequence.clone(),
            baseline,
            probes: self.probes,
            final_sequence: Some(self.retained),
            probe_count: self.executions,
            all_runs: self.runs,
        })
    }
}

/// Back-half-first divide and conquer over the retained steps.
pub fn tail_prune(
    driver: &CachedDriver,
    sequence: &StepSequence,
    baseline: Arc<ExecutionResult>,
) -> Result<IsolationResult, IsolationError> {
    fn classify(s: &mut Session<'_>, chunk: &[String]) -> Result<(), IsolationError> {
        if chunk.is_empty() || !s.try_remove(chunk)? || chunk.len() == 1 {
            return Ok(());
        }
        let (front, back) = chunk.split_at(chunk.len() / 2);
        classify(s, back)?;
        classify(s, front)
    }
    let mut session = Session::new(driver, baseline.clone());
    classify(&mut session, &sequence.ids())?;
    session.finish(Strategy::TailPrune, sequence, baseline)
}

/// Removes each step from the full sequence independently.
pub fn no_del(
    driver: &CachedDriver,
    sequence: &StepSequence,
    baseline: Arc<ExecutionResult>,
    jobs: usize,
) -> Result<IsolationResult, IsolationError> {
    let ids = sequence.ids();
    let probe_one = |i: usize| -> Result<Arc<ExecutionResult>, DriverError> {
        let subset: Vec<String> = ids.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| s.clone()).collect();
        driver.execute(&subset)
    };
    let runs: Vec<Arc<ExecutionResult>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| DriverError::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| (0..ids.len()).into_par_iter().map(probe_one).collect::<Result<_, _>>())?
    } else {
        (0..ids.len()).map(probe_one).collect::<Result<_, _>>()?
    };
    let mut probes = Vec::new();
    let mut all_runs = vec![baseline.clone()];
    for (id, run) in ids.iter().zip(&runs) {
        if run.outcome == Outcome::Pass {
            probes.push(RemovalProbe::new(id, baseline.clone(), run.clone())?);
        }
        all_runs.push(run.clone());
    }
    Ok(IsolationResult {
        strategy: Strategy::NoDel,
        sequence: sequence.clone(),
        baseline,
        probes,
        final_sequence: None,
        probe_count: ids.len(),
        all_runs,
    })
}

/// Visits single steps in a seeded random order, deleting or pinning each.
pub fn rand_order(
    driver: &CachedDriver,
    sequence: &StepSequence,
    baseline: Arc<ExecutionResult>,
    seed: u64,
) -> Result<IsolationResult, IsolationError> {
    let mut order = sequence.ids();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut session = Session::new(driver, baseline.clone());
    for step in order {
        session.try_remove(std::slice::from_ref(&step))?;
    }
    session.finish(Strategy::Rand { seed }, sequence, baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub subset: Vec<String>,
    pub outcome: Outcome,
    pub wall_time: f64,
    pub coverage_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub removed_step: String,
    /// Index into `runs` of the failing run the step was removed from.
    pub baseline_run: usize,
    pub probe_run: usize,
    pub flipped: bool,
    pub diff: Vec<StatementId>,
}

/// Serializable form of an [`IsolationResult`]; runs are referenced by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationRecord {
    pub strategy: Strategy,
    pub steps: Vec<String>,
    pub bug_causing: Vec<String>,
    pub final_sequence: Option<Vec<String>>,
    pub probe_count: usize,
    pub fallback: bool,
    pub runs: Vec<RunRecord>,
    pub probes: Vec<ProbeRecord>,
}

impl IsolationResult {
    pub fn to_record(&self) -> IsolationRecord {
        let index_of = |run: &ExecutionResult| {
            self.all_runs
                .iter()
                .position(|r| r.subset == run.subset)
                .expect("probe runs are observed runs")
        };
        IsolationRecord {
            strategy: self.strategy,
            steps: self.sequence.ids(),
            bug_causing: self.bug_causing(),
            final_sequence: self.final_sequence.clone(),
            probe_count: self.probe_count,
            fallback: self.is_fallback(),
            runs: self
                .all_runs
                .iter()
                .map(|r| RunRecord {
                    subset: r.subset.clone(),
                    outcome: r.outcome,
                    wall_time: r.wall_time,
                    coverage_size: r.coverage.len(),
                })
                .collect(),
            probes: self
                .probes
                .iter()
                .map(|p| ProbeRecord {
                    removed_step: p.removed_step.clone(),
                    baseline_run: index_of(&p.baseline),
                    probe_run: index_of(&p.probe),
                    flipped: p.flipped,
                    diff: p.diff.iter().cloned().collect(),
                })
                .collect(),
        }
    }

    /// Total simulated or measured time of every distinct run.
    pub fn total_wall_time(&self) -> f64 {
        self.all_runs.iter().map(|r| r.wall_time).sum()
    }

    pub fn baseline_coverage(&self) -> &CoverageSet {
        &self.baseline.coverage
    }
}
