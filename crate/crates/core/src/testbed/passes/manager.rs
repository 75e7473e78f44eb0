//! Pass manager: runs the selected passes in order, owns the analysis cache
//! and drops cached analyses after any pass that does not preserve them.

use super::super::instrument::{pseudo_statements, Trace};
use super::super::ir::{evaluate, validate_instructions, Instr, MiniProgram};
use super::{AnalysisCache, Crash, Defect, PassCx, PassKind};
use crate::model::CoverageSet;

pseudo_statements! { "pass_manager", "driver/pass_manager.mini";
    ENTRY = 10 in "run_pipeline", "verify input module";
    CREATE_ANALYSES = 12 in "run_pipeline", "create analysis manager";
    DISPATCH_CONST_FOLD = 20 in "dispatch", "run const_fold";
    DISPATCH_CSE = 21 in "dispatch", "run cse";
    DISPATCH_DCE = 22 in "dispatch", "run dce";
    DISPATCH_REASSOCIATE = 23 in "dispatch", "run reassociate";
    DISPATCH_STRENGTH_REDUCE = 24 in "dispatch", "run strength_reduce";
    DISPATCH_INSTCOMBINE = 25 in "dispatch", "run instcombine_lite";
    INVALIDATE = 31 in "after_pass", "invalidate non-preserved analyses";
    VERIFY_FAILED = 35 in "after_pass", "verifier rejected module";
    EMIT = 40 in "run_pipeline", "emit module";
}

fn dispatch_line(kind: PassKind) -> u32 {
    match kind {
        PassKind::ConstFold => DISPATCH_CONST_FOLD,
        PassKind::Cse => DISPATCH_CSE,
        PassKind::Dce => DISPATCH_DCE,
        PassKind::Reassociate => DISPATCH_REASSOCIATE,
        PassKind::StrengthReduce => DISPATCH_STRENGTH_REDUCE,
        PassKind::InstcombineLite => DISPATCH_INSTCOMBINE,
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Outputs of the compiled program, or the compiler crash.
    pub result: Result<Vec<i64>, Crash>,
    pub coverage: CoverageSet,
    pub compiled: Vec<Instr>,
}

/// Compiles `program` with `passes` (in the given order) and runs the result.
pub fn run_pipeline(
    program: &MiniProgram,
    passes: &[PassKind],
    defect: Option<Defect>,
    collect_coverage: bool,
) -> PipelineOutput {
    let mut trace = Trace::new(collect_coverage);
    let mut analyses = AnalysisCache::default();
    let mut ir = program.instructions.clone();
    trace.hit(FILE, ENTRY);
    trace.hit(FILE, CREATE_ANALYSES);
    let mut crash = None;
    for &kind in passes {
        trace.hit(FILE, dispatch_line(kind));
        let mut cx = PassCx {
            trace: &mut trace,
            analyses: &mut analyses,
            defect,
            params: program.params.len(),
        };
        match kind.run(&mut ir, &mut cx) {
            Ok(effect) => {
                if !effect.preserves_analyses && analyses.is_populated() {
                    trace.hit(FILE, INVALIDATE);
                    analyses.invalidate(&mut trace);
                }
            }
            Err(c) => {
                crash = Some(c);
                break;
            }
        }
        if let Err(e) = validate_instructions(&ir, program.params.len()) {
            trace.hit(FILE, VERIFY_FAILED);
            crash = Some(Crash {
                pass: kind.name(),
                message: e.to_string(),
            });
            break;
        }
    }
    let result = match crash {
        Some(c) => Err(c),
        None => {
            trace.hit(FILE, EMIT);
            Ok(evaluate(&ir, &program.params))
        }
    };
    PipelineOutput {
        result,
        coverage: trace.into_coverage(),
        compiled: ir,
    }
}
