//! The six optimization passes of the toy compiler plus the shared
//! infrastructure they run on (pass manager, scale analysis, IR rewriting).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::instrument::{PassSpec, Trace};
use super::ir::Instr;

pub mod const_fold;
pub mod cse;
pub mod dce;
pub mod instcombine;
pub mod manager;
pub mod reassociate;
pub mod rewrite;
pub mod scale;
pub mod strength_reduce;

pub use manager::{run_pipeline, PipelineOutput};
pub use scale::AnalysisCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassKind {
    ConstFold,
    Cse,
    Dce,
    Reassociate,
    StrengthReduce,
    InstcombineLite,
}

impl PassKind {
    /// Canonical pipeline order.
    pub const ALL: [PassKind; 6] = [
        PassKind::ConstFold,
        PassKind::Cse,
        PassKind::Dce,
        PassKind::Reassociate,
        PassKind::StrengthReduce,
        PassKind::InstcombineLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PassKind::ConstFold => "const_fold",
            PassKind::Cse => "cse",
            PassKind::Dce => "dce",
            PassKind::Reassociate => "reassociate",
            PassKind::StrengthReduce => "strength_reduce",
            PassKind::InstcombineLite => "instcombine_lite",
        }
    }

    pub fn virtual_file(self) -> &'static str {
        match self {
            PassKind::ConstFold => const_fold::FILE,
            PassKind::Cse => cse::FILE,
            PassKind::Dce => dce::FILE,
            PassKind::Reassociate => reassociate::FILE,
            PassKind::StrengthReduce => strength_reduce::FILE,
            PassKind::InstcombineLite => instcombine::FILE,
        }
    }

    pub fn spec(self) -> PassSpec {
        match self {
            PassKind::ConstFold => const_fold::spec(),
            PassKind::Cse => cse::spec(),
            PassKind::Dce => dce::spec(),
            PassKind::Reassociate => reassociate::spec(),
            PassKind::StrengthReduce => strength_reduce::spec(),
            PassKind::InstcombineLite => instcombine::spec(),
        }
    }

    fn run(self, ir: &mut Vec<Instr>, cx: &mut PassCx<'_>) -> Result<PassEffect, Crash> {
        match self {
            PassKind::ConstFold => const_fold::run(ir, cx),
            PassKind::Cse => cse::run(ir, cx),
            PassKind::Dce => dce::run(ir, cx),
            PassKind::Reassociate => reassociate::run(ir, cx),
            PassKind::StrengthReduce => strength_reduce::run(ir, cx),
            PassKind::InstcombineLite => instcombine::run(ir, cx),
        }
    }
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PassKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PassKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown pass `{s}`"))
    }
}

/// Seeded defects. Each one swaps a correct statement of one pass for a
/// faulty variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defect {
    /// const_fold folds `-k` to `k`.
    ConstFoldNegSign,
    /// cse keys shifts by operand only, ignoring the shift amount.
    CseShlKey,
    /// dce forgets to mark the operand of a negation live.
    DceNegUse,
    /// reassociate merges `(x + c1) + c2` into `x + (c1 - c2)`.
    ReassocConstMerge,
    /// strength_reduce is off by one for power-of-two factors >= 16.
    StrengthPow2Shift,
    /// instcombine asserts on combined shifts of 64 bits or more.
    InstcombineShlOverflow,
    /// instcombine merges `(x << a) << b` into `x << max(a, b)`.
    InstcombineShlMerge,
    /// cse compacts the instruction list but reports the scale analysis preserved.
    CseStalePreserve,
    /// reassociate inserts constants but reports the scale analysis preserved.
    ReassocStalePreserve,
}

/// Abnormal termination of the compiler (maps to a crash outcome).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crash {
    pub pass: &'static str,
    pub message: String,
}

impl fmt::Display for Crash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "crash in {}: {}", self.pass, self.message)
    }
}

pub struct PassCx<'a> {
    pub trace: &'a mut Trace,
    pub analyses: &'a mut AnalysisCache,
    pub defect: Option<Defect>,
    pub params: usize,
}

impl PassCx<'_> {
    pub fn has(&self, d: Defect) -> bool {
        self.defect == Some(d)
    }
}

pub struct PassEffect {
    /// Whether cached analyses remain valid after the pass.
    pub preserves_analyses: bool,
}

/// Statement tables of every instrumented component.
pub fn all_specs() -> Vec<PassSpec> {
    let mut v: Vec<PassSpec> = PassKind::ALL.iter().map(|k| k.spec()).collect();
    v.push(manager::spec());
    v.push(scale::spec());
    v.push(rewrite::spec());
    v
}

/// Value of an operand if it names a `Const` instruction.
pub(crate) fn const_value(ir: &[Instr], op: super::ir::Operand) -> Option<i64> {
    match op {
        super::ir::Operand::Inst(j) => match ir[j] {
            Instr::Const(k) => Some(k),
            _ => None,
        },
        super::ir::Operand::Param(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::ir::{interpret, random_program, MiniProgram, Operand::*};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pipeline(rng: &mut ChaCha8Rng) -> Vec<PassKind> {
        let n = rng.gen_range(1..=10);
        (0..n).map(|_| PassKind::ALL[rng.gen_range(0..6)]).collect()
    }

    #[test]
    fn correct_passes_preserve_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let prog = random_program(&mut rng, 24);
            let pipeline = random_pipeline(&mut rng);
            let out = run_pipeline(&prog, &pipeline, None, false);
            assert_eq!(
                out.result.as_ref().ok(),
                Some(&interpret(&prog)),
                "pipeline {pipeline:?} on {prog:?}"
            );
        }
    }

    #[test]
    fn every_pass_alone_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in PassKind::ALL {
            for _ in 0..300 {
                let prog = random_program(&mut rng, 16);
                let out = run_pipeline(&prog, &[kind], None, false);
                assert_eq!(out.result.ok(), Some(interpret(&prog)), "{kind} on {prog:?}");
            }
        }
    }

    #[test]
    fn coverage_is_registered_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prog = random_program(&mut rng, 20);
        let a = run_pipeline(&prog, &PassKind::ALL, None, true);
        let b = run_pipeline(&prog, &PassKind::ALL, None, true);
        assert_eq!(a.coverage, b.coverage);
        assert!(a.coverage.iter().all(|s| s.function.is_some()));
        assert!(run_pipeline(&prog, &PassKind::ALL, None, false).coverage.is_empty());
    }

    #[test]
    fn pass_statements_appear_iff_pass_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let prog = random_program(&mut rng, 20);
            let pipeline: Vec<PassKind> = PassKind::ALL.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            let out = run_pipeline(&prog, &pipeline, None, true);
            for kind in PassKind::ALL {
                let covered = out.coverage.iter().any(|s| s.file == kind.virtual_file());
                assert_eq!(covered, pipeline.contains(&kind), "{kind} in {pipeline:?}");
            }
        }
    }

    #[test]
    fn passes_have_thirty_to_eighty_statements() {
        for kind in PassKind::ALL {
            let n = kind.spec().statements.len();
            assert!((30..=80).contains(&n), "{kind}: {n}");
        }
    }

    #[test]
    fn defects_misbehave_on_targeted_programs() {
        // -(5) folded with the sign defect
        let p = MiniProgram {
            params: vec![],
            instructions: vec![Instr::Const(5), Instr::Neg(Inst(0)), Instr::Output(Inst(1))],
        };
        let ok = run_pipeline(&p, &[PassKind::ConstFold], None, false);
        let bad = run_pipeline(&p, &[PassKind::ConstFold], Some(Defect::ConstFoldNegSign), false);
        assert_eq!(ok.result.unwrap(), vec![-5]);
        assert_eq!(bad.result.unwrap(), vec![5]);

        // (x << 40) << 30 crashes with the overflow assertion
        let q = MiniProgram {
            params: vec![3],
            instructions: vec![Instr::Shl(Param(0), 40), Instr::Shl(Inst(0), 30), Instr::Output(Inst(1))],
        };
        let ok = run_pipeline(&q, &[PassKind::InstcombineLite], None, false);
        assert_eq!(ok.result.unwrap(), vec![0]);
        let bad = run_pipeline(&q, &[PassKind::InstcombineLite], Some(Defect::InstcombineShlOverflow), false);
        assert!(bad.result.is_err());
    }
}
