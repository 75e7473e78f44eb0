//! Seeded-bug catalog and the scenario generator.
//!
//! Every scenario pairs a defect with a small motif program that exposes
//! it, padded with a random filler program and random filler passes. A
//! candidate is emitted only after an exhaustive check over all subsets of
//! its pipeline shows that it fails exactly when all trigger passes run.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ir::{interpret, random_program, Instr, MiniProgram, Operand};
use super::passes::{
    const_fold, cse, dce, instcombine, reassociate, run_pipeline, strength_reduce, Defect, PassKind,
};
use crate::model::{Outcome, StatementId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BugKind {
    WrongCode,
    Crash,
    StaleState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededBug {
    pub id: String,
    pub template: String,
    pub kind: BugKind,
    pub defect: Defect,
    pub trigger_passes: Vec<PassKind>,
    pub ground_truth: BTreeSet<StatementId>,
    pub program: MiniProgram,
    pub expected_output: Vec<i64>,
    /// The compilation steps, in order. A pass may appear more than once.
    pub pipeline: Vec<PassKind>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("could not generate a valid `{template}` scenario in {attempts} attempts")]
    GenerationFailed { template: String, attempts: usize },
    #[error("scenario `{0}` is invalid: {1}")]
    Invalid(String, String),
    #[error("unknown scenario `{0}`")]
    Unknown(String),
}

pub fn step_id(kind: PassKind, position: usize) -> String {
    format!("{}#{}", kind.name(), position)
}

impl SeededBug {
    pub fn step_ids(&self) -> Vec<String> {
        self.pipeline.iter().enumerate().map(|(i, k)| step_id(*k, i)).collect()
    }

    /// Trigger steps of this scenario's pipeline, in order.
    pub fn trigger_steps(&self) -> Vec<String> {
        self.pipeline
            .iter()
            .enumerate()
            .filter(|(_, k)| self.trigger_passes.contains(k))
            .map(|(i, k)| step_id(*k, i))
            .collect()
    }

    pub fn ground_truth_files(&self) -> BTreeSet<String> {
        self.ground_truth.iter().map(|s| s.file.clone()).collect()
    }

    pub fn ground_truth_functions(&self) -> BTreeSet<String> {
        self.ground_truth.iter().filter_map(|s| s.function_unit()).collect()
    }

    /// Outcome of compiling with the given passes and running the result.
    pub fn outcome_with(&self, passes: &[PassKind]) -> Outcome {
        let out = run_pipeline(&self.program, passes, Some(self.defect), false);
        classify(&out.result, &self.expected_output)
    }

    /// Exhaustive check of the scenario invariants over all `2^n` subsets.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |why: String| Err(ScenarioError::Invalid(self.id.clone(), why));
        if self.program.validate().is_err() {
            return fail("program is malformed".into());
        }
        if interpret(&self.program) != self.expected_output {
            return fail("expected output disagrees with the interpreter".into());
        }
        let n = self.pipeline.len();
        if n > 20 {
            return fail(format!("pipeline of {n} steps is too long to validate"));
        }
        let trigger_mask: u32 = self
            .pipeline
            .iter()
            .enumerate()
            .filter(|(_, k)| self.trigger_passes.contains(k))
            .fold(0, |m, (i, _)| m | (1 << i));
        if trigger_mask.count_ones() as usize != self.trigger_passes.len() {
            return fail("each trigger pass must appear exactly once".into());
        }
        let mut memo: HashMap<Vec<PassKind>, Outcome> = HashMap::new();
        for mask in 0u32..(1 << n) {
            let passes: Vec<PassKind> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| self.pipeline[i]).collect();
            let outcome = *memo.entry(passes.clone()).or_insert_with(|| self.outcome_with(&passes));
            let should_fail = mask & trigger_mask == trigger_mask;
            if outcome.is_fail() != should_fail {
                return fail(format!("subset {passes:?} gives {outcome}"));
            }
        }
        let full = run_pipeline(&self.program, &self.pipeline, Some(self.defect), true);
        let want = match self.kind {
            BugKind::Crash => Outcome::FailCrash,
            BugKind::WrongCode | BugKind::StaleState => Outcome::FailWrongOutput,
        };
        if classify(&full.result, &self.expected_output) != want {
            return fail(format!("full pipeline does not fail with {want}"));
        }
        if !self.ground_truth.iter().all(|s| full.coverage.contains(s)) {
            return fail("faulty statement is not executed by the failing run".into());
        }
        Ok(())
    }
}

pub(crate) fn classify(result: &Result<Vec<i64>, super::passes::Crash>, expected: &[i64]) -> Outcome {
    match result {
        Err(_) => Outcome::FailCrash,
        Ok(out) if out != expected => Outcome::FailWrongOutput,
        Ok(_) => Outcome::Pass,
    }
}

struct Template {
    name: &'static str,
    kind: BugKind,
    defect: Defect,
    triggers: &'static [PassKind],
    /// Pass and line of the faulty statement.
    fault: (PassKind, u32),
    motif: fn(&[i64]) -> Vec<Instr>,
    params: usize,
}

use Instr::*;
use Operand::{Inst, Param};

const TEMPLATES: &[Template] = &[
    Template {
        name: "CF-neg-fold",
        kind: BugKind::WrongCode,
        defect: Defect::ConstFoldNegSign,
        triggers: &[PassKind::ConstFold],
        fault: (PassKind::ConstFold, const_fold::NEG_COMPUTE_BAD),
        motif: |p| vec![Const(p[0]), Neg(Inst(0)), Output(Inst(1))],
        params: 1,
    },
    Template {
        name: "CSE-shl-key",
        kind: BugKind::WrongCode,
        defect: Defect::CseShlKey,
        triggers: &[PassKind::Cse],
        fault: (PassKind::Cse, cse::KEY_SHL_OPERAND),
        motif: |_| vec![Shl(Param(0), 2), Shl(Param(0), 3), Output(Inst(0)), Output(Inst(1))],
        params: 1,
    },
    Template {
        name: "DCE-neg-use",
        kind: BugKind::Crash,
        defect: Defect::DceNegUse,
        triggers: &[PassKind::Dce],
        fault: (PassKind::Dce, dce::MARK_NEG_SKIPPED),
        motif: |_| vec![Add(Param(0), Param(1)), Neg(Inst(0)), Output(Inst(1))],
        params: 2,
    },
    Template {
        name: "RA-const-merge",
        kind: BugKind::WrongCode,
        defect: Defect::ReassocConstMerge,
        triggers: &[PassKind::Reassociate],
        fault: (PassKind::Reassociate, reassociate::MERGE_DIFF),
        motif: |p| vec![Const(p[1]), Add(Param(0), Inst(0)), Const(p[2]), Add(Inst(1), Inst(2)), Output(Inst(3))],
        params: 1,
    },
    Template {
        name: "SR-pow2-shift",
        kind: BugKind::WrongCode,
        defect: Defect::StrengthPow2Shift,
        triggers: &[PassKind::StrengthReduce],
        fault: (PassKind::StrengthReduce, strength_reduce::LOG2_WIDE),
        motif: |_| vec![Const(16), Mul(Param(0), Inst(0)), Output(Inst(1))],
        params: 1,
    },
    Template {
        name: "IC-shl-overflow",
        kind: BugKind::Crash,
        defect: Defect::InstcombineShlOverflow,
        triggers: &[PassKind::InstcombineLite],
        fault: (PassKind::InstcombineLite, instcombine::SHL_CHAIN_ASSERT),
        motif: |_| vec![Shl(Param(0), 40), Shl(Inst(0), 30), Output(Inst(1))],
        params: 1,
    },
    Template {
        name: "SR-IC-shl-merge",
        kind: BugKind::WrongCode,
        defect: Defect::InstcombineShlMerge,
        triggers: &[PassKind::StrengthReduce, PassKind::InstcombineLite],
        fault: (PassKind::InstcombineLite, instcombine::SHL_CHAIN_MAX),
        motif: |_| vec![Const(8), Mul(Param(0), Inst(0)), Shl(Inst(1), 2), Output(Inst(2))],
        params: 1,
    },
    Template {
        name: "CSE-SR-stale",
        kind: BugKind::StaleState,
        defect: Defect::CseStalePreserve,
        triggers: &[PassKind::Cse, PassKind::StrengthReduce],
        fault: (PassKind::Cse, cse::PRESERVE_ALL),
        // The duplicate constant is removed, shifting both multiplies down
        // by one; the second then reads the first one's scale fact.
        motif: |_| {
            vec![
                Const(4),
                Const(4),
                Mul(Param(0), Inst(0)),
                Mul(Param(1), Inst(1)),
                Output(Inst(2)),
                Output(Inst(3)),
            ]
        },
        params: 2,
    },
    Template {
        name: "RA-SR-stale",
        kind: BugKind::StaleState,
        defect: Defect::ReassocStalePreserve,
        triggers: &[PassKind::Reassociate, PassKind::StrengthReduce],
        fault: (PassKind::Reassociate, reassociate::PRESERVE_ALL),
        // Reassociation inserts a constant before the outer add, shifting
        // the multiplies up by one; the first then reads the second one's
        // scale fact.
        motif: |p| {
            vec![
                Const(p[1]),
                Add(Param(0), Inst(0)),
                Const(p[2]),
                Add(Inst(1), Inst(2)),
                Const(8),
                Mul(Param(1), Inst(4)),
                Mul(Param(2), Inst(4)),
                Output(Inst(3)),
                Output(Inst(5)),
                Output(Inst(6)),
            ]
        },
        params: 3,
    },
];

pub fn template_names() -> Vec<&'static str> {
    TEMPLATES.iter().map(|t| t.name).collect()
}

fn fault_statement(t: &Template) -> StatementId {
    let (pass, line) = t.fault;
    let spec = pass.spec();
    let st = spec
        .statements
        .iter()
        .find(|s| s.line == line)
        .expect("fault line is a registered statement");
    StatementId::new(spec.virtual_file, line, Some(st.function)).expect("virtual statement")
}

/// Appends `filler` after `motif`, renumbering its operands and parameters.
fn splice(motif: MiniProgram, filler: MiniProgram) -> MiniProgram {
    let offset = motif.instructions.len();
    let pbase = motif.params.len();
    let mut params = motif.params;
    params.extend(filler.params);
    let mut instructions = motif.instructions;
    instructions.extend(filler.instructions.iter().map(|ins| {
        ins.map_operands(|op| match op {
            Operand::Inst(j) => Operand::Inst(j + offset),
            Operand::Param(p) => Operand::Param(p + pbase),
        })
    }));
    MiniProgram { params, instructions }
}

fn build(t: &Template, id: String, params: Vec<i64>, consts: &[i64], filler: Option<MiniProgram>, pipeline: Vec<PassKind>) -> SeededBug {
    let motif = MiniProgram {
        params,
        instructions: (t.motif)(consts),
    };
    let program = match filler {
        Some(f) => splice(motif, f),
        None => motif,
    };
    SeededBug {
        id,
        template: t.name.to_string(),
        kind: t.kind,
        defect: t.defect,
        trigger_passes: t.triggers.to_vec(),
        ground_truth: [fault_statement(t)].into_iter().collect(),
        expected_output: interpret(&program),
        program,
        pipeline,
    }
}

/// The canonical instance of a template: fixed inputs, no filler, and the
/// default six-pass pipeline. Its id is the template name.
pub fn named_scenario(name: &str) -> Result<SeededBug, ScenarioError> {
    let t = TEMPLATES
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
    let params = [7, 11, 13][..t.params].to_vec();
    let bug = build(t, t.name.to_string(), params, &[5, 3, 10], None, PassKind::ALL.to_vec());
    bug.validate()?;
    Ok(bug)
}

pub fn catalog() -> Result<Vec<SeededBug>, ScenarioError> {
    TEMPLATES.iter().map(|t| named_scenario(t.name)).collect()
}

const ATTEMPTS: usize = 200;

fn distinct_values<R: Rng>(rng: &mut R, n: usize, lo: i64, hi: i64) -> Vec<i64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = rng.gen_range(lo..hi);
        if v != 0 && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn candidate(t: &Template, id: &str, rng: &mut ChaCha8Rng) -> SeededBug {
    let n = rng.gen_range(6..=12);
    let fillers: Vec<PassKind> = PassKind::ALL.into_iter().filter(|k| !t.triggers.contains(k)).collect();
    let mut slots: Vec<usize> = sample(rng, n, t.triggers.len()).into_vec();
    slots.sort_unstable();
    let mut pipeline: Vec<PassKind> = (0..n).map(|_| fillers[rng.gen_range(0..fillers.len())]).collect();
    for (slot, trigger) in slots.iter().zip(t.triggers) {
        pipeline[*slot] = *trigger;
    }
    let params = distinct_values(rng, t.params, -500, 500);
    let consts = distinct_values(rng, 3, -50, 50);
    let filler = random_program(rng, 10);
    build(t, id.to_string(), params, &consts, Some(filler), pipeline)
}

/// Generates `count` validated scenarios, cycling through every template.
/// Deterministic per `seed`: scenario `i` draws from its own ChaCha8 stream.
pub fn generate_scenarios(seed: u64, count: usize) -> Result<Vec<SeededBug>, ScenarioError> {
    (0..count)
        .map(|i| {
            let t = &TEMPLATES[i % TEMPLATES.len()];
            let id = format!("{}-{:03}", t.name, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for _ in 0..ATTEMPTS {
                let bug = candidate(t, &id, &mut rng);
                match bug.validate() {
                    Ok(()) => return Ok(bug),
                    Err(e) => log::trace!("rejected candidate: {e}"),
                }
            }
            Err(ScenarioError::GenerationFailed {
                template: t.name.to_string(),
                attempts: ATTEMPTS,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_valid() {
        let all = catalog().unwrap();
        assert_eq!(all.len(), TEMPLATES.len());
        let files: BTreeSet<String> = all.iter().flat_map(|b| b.ground_truth_files()).collect();
        assert_eq!(files.len(), 6);
    }

    #[test]
    fn cf_neg_fold_predicate_matches_brute_force() {
        // Failure iff const_fold runs, checked over all 2^6 subsets.
        let bug = named_scenario("CF-neg-fold").unwrap();
        for mask in 0u32..64 {
            let passes: Vec<PassKind> = (0..6).filter(|i| mask & (1 << i) != 0).map(|i| PassKind::ALL[i]).collect();
            let fails = bug.outcome_with(&passes).is_fail();
            assert_eq!(fails, passes.contains(&PassKind::ConstFold), "{passes:?}");
        }
        assert_eq!(bug.outcome_with(&[PassKind::ConstFold]), Outcome::FailWrongOutput);
        assert_eq!(bug.outcome_with(&[]), Outcome::Pass);
    }

    #[test]
    fn stale_state_needs_both_passes() {
        let bug = named_scenario("CSE-SR-stale").unwrap();
        let all = PassKind::ALL.to_vec();
        let without = |k: PassKind| all.iter().copied().filter(|p| *p != k).collect::<Vec<_>>();
        assert_eq!(bug.outcome_with(&all), Outcome::FailWrongOutput);
        assert_eq!(bug.outcome_with(&without(PassKind::Cse)), Outcome::Pass);
        assert_eq!(bug.outcome_with(&without(PassKind::StrengthReduce)), Outcome::Pass);
        // The output first goes wrong in strength_reduce, but the fault is in cse.
        assert_eq!(bug.ground_truth_files(), [cse::FILE.to_string()].into_iter().collect());
    }

    #[test]
    fn generation_is_deterministic_and_diverse() {
        let a = generate_scenarios(42, 20).unwrap();
        let b = generate_scenarios(42, 20).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let kinds: BTreeSet<String> = a.iter().map(|s| format!("{:?}", s.kind)).collect();
        assert_eq!(kinds.len(), 3);
        assert!(a.iter().any(|s| s.trigger_passes.len() == 1));
        assert!(a.iter().any(|s| s.trigger_passes.len() == 2));
        for s in &a {
            assert!((6..=12).contains(&s.pipeline.len()));
            let triggers: Vec<PassKind> = s.trigger_passes.clone();
            let rest: Vec<PassKind> = s.pipeline.iter().copied().filter(|k| !triggers.contains(k)).collect();
            assert!(s.outcome_with(&s.pipeline).is_fail());
            assert_eq!(s.outcome_with(&rest), Outcome::Pass);
        }
    }
}
