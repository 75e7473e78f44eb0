//! Dead code elimination: mark everything reachable from outputs, then
//! delete the rest and compact.

use super::super::instrument::pseudo_statements;
use super::super::ir::{Instr, Operand};
use super::{rewrite, Crash, Defect, PassCx, PassEffect};

pseudo_statements! { "dce", "passes/dce.mini";
    RUN_ENTRY = 10 in "run", "allocate live set";
    SEED_OUTPUT = 13 in "run", "output is a root";
    SEED_NONE = 14 in "run", "no roots";
    WORKLIST_POP = 17 in "mark_live", "pop worklist";
    ALREADY_LIVE = 19 in "mark_live", "already marked";
    MARK_CONST = 22 in "mark_live", "constant is a leaf";
    MARK_BINARY_SAME = 23 in "mark_live", "operands coincide";
    MARK_BINARY = 24 in "mark_live", "mark both operands";
    MARK_NEG = 26 in "mark_live", "mark negated operand";
    MARK_NEG_SKIPPED = 27 in "mark_live", "treat negation as a leaf";
    MARK_NEG_CONST = 28 in "mark_live", "negated operand is constant";
    MARK_SHL = 29 in "mark_live", "mark shifted operand";
    MARK_SHL_ZERO = 30 in "mark_live", "shift by zero";
    MARK_COPY = 31 in "mark_live", "mark copied operand";
    MARK_OUTPUT = 32 in "mark_live", "mark output operand";
    PUSH_OPERAND = 34 in "push_operand", "queue instruction operand";
    PUSH_DUP = 35 in "push_operand", "operand already live";
    SKIP_PARAM = 36 in "push_operand", "parameters are always live";
    SWEEP = 41 in "sweep", "for each instruction";
    SWEEP_DEAD = 43 in "sweep", "instruction is dead";
    SWEEP_DEAD_CONST = 44 in "sweep", "dead constant";
    SWEEP_KEEP = 45 in "sweep", "instruction is live";
    SWEEP_DEAD_BINARY = 46 in "sweep", "dead binary operation";
    SWEEP_DEAD_UNARY = 47 in "sweep", "dead unary operation";
    SWEEP_DEAD_COPY = 48 in "sweep", "dead copy";
    NOTHING_DEAD = 49 in "run", "module unchanged";
    COMPACT = 51 in "run", "compact module";
    STAT_REMOVED = 53 in "run", "bump removed counter";
    PRESERVE_DROP = 56 in "preserved", "scale analysis invalidated by renumbering";
    RUN_EXIT = 58 in "run", "release live set";
}

pub fn run(ir: &mut Vec<Instr>, cx: &mut PassCx<'_>) -> Result<PassEffect, Crash> {
    let t = &mut *cx.trace;
    t.hit(FILE, RUN_ENTRY);
    let n = ir.len();
    let mut live = vec![false; n];
    let mut work: Vec<usize> = Vec::new();
    for (i, ins) in ir.iter().enumerate() {
        if matches!(ins, Instr::Output(_)) {
            t.hit(FILE, SEED_OUTPUT);
            work.push(i);
        }
    }
    if work.is_empty() {
        t.hit(FILE, SEED_NONE);
    }
    while let Some(i) = work.pop() {
        t.hit(FILE, WORKLIST_POP);
        if live[i] {
            t.hit(FILE, ALREADY_LIVE);
            continue;
        }
        live[i] = true;
        let operands: Vec<Operand> = match ir[i] {
            Instr::Const(_) => {
                t.hit(FILE, MARK_CONST);
                vec![]
            }
            Instr::Add(a, b) | Instr::Mul(a, b) => {
                t.hit(FILE, MARK_BINARY);
                if a == b {
                    t.hit(FILE, MARK_BINARY_SAME);
                }
                vec![a, b]
            }
            Instr::Neg(a) => {
                if cx.defect == Some(Defect::DceNegUse) {
                    t.hit(FILE, MARK_NEG_SKIPPED);
                    vec![]
                } else {
                    t.hit(FILE, MARK_NEG);
                    if matches!(a, Operand::Inst(j) if matches!(ir[j], Instr::Const(_))) {
                        t.hit(FILE, MARK_NEG_CONST);
                    }
                    vec![a]
                }
            }
            Instr::Shl(a, s) => {
                t.hit(FILE, MARK_SHL);
                if s == 0 {
                    t.hit(FILE, MARK_SHL_ZERO);
                }
                vec![a]
            }
            Instr::Copy(a) => {
                t.hit(FILE, MARK_COPY);
                vec![a]
            }
            Instr::Output(a) => {
                t.hit(FILE, MARK_OUTPUT);
                vec![a]
            }
        };
        for op in operands {
            match op {
                Operand::Inst(j) => {
                    t.hit(FILE, PUSH_OPERAND);
                    if live[j] {
                        t.hit(FILE, PUSH_DUP);
                    }
                    work.push(j);
                }
                Operand::Param(_) => t.hit(FILE, SKIP_PARAM),
            }
        }
    }
    let mut removed = 0;
    for (ins, &l) in ir.iter().zip(&live) {
        t.hit(FILE, SWEEP);
        if l {
            t.hit(FILE, SWEEP_KEEP);
        } else {
            t.hit(FILE, SWEEP_DEAD);
            t.hit(
                FILE,
                match ins {
                    Instr::Const(_) => SWEEP_DEAD_CONST,
                    Instr::Add(..) | Instr::Mul(..) => SWEEP_DEAD_BINARY,
                    Instr::Neg(_) | Instr::Shl(..) => SWEEP_DEAD_UNARY,
                    Instr::Copy(_) | Instr::Output(_) => SWEEP_DEAD_COPY,
                },
            );
            removed += 1;
        }
    }
    t.hit(FILE, RUN_EXIT);
    if removed == 0 {
        t.hit(FILE, NOTHING_DEAD);
        return Ok(PassEffect { preserves_analyses: true });
    }
    t.hit(FILE, STAT_REMOVED);
    t.hit(FILE, COMPACT);
    *ir = rewrite::compact(ir, &live, &vec![None; n], "dce", t)?;
    t.hit(FILE, PRESERVE_DROP);
    Ok(PassEffect { preserves_analyses: false })
}
