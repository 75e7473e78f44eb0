//! Constant folding: instructions whose operands are all constants are
//! replaced in place by their value.

use super::super::instrument::{pseudo_statements, Trace};
use super::super::ir::{Instr, Operand};
use super::{Crash, Defect, PassCx, PassEffect};

pseudo_statements! { "const_fold", "passes/const_fold.mini";
    RUN_ENTRY = 10 in "run", "set up folding state";
    RUN_SCAN = 12 in "run", "for each instruction";
    RUN_DONE = 15 in "run", "report statistics";
    STAT_FOLDED = 17 in "run", "module changed";
    STAT_NONE = 19 in "run", "module unchanged";
    LOOKUP_ENTRY = 24 in "const_of", "classify operand";
    LOOKUP_PARAM = 26 in "const_of", "parameter is never constant";
    LOOKUP_HIT = 28 in "const_of", "operand is a constant";
    LOOKUP_MISS = 30 in "const_of", "operand is computed";
    VISIT_CONST = 36 in "visit", "already a constant";
    VISIT_ADD = 38 in "visit", "binary add";
    VISIT_MUL = 40 in "visit", "binary mul";
    VISIT_NEG = 42 in "visit", "negation";
    VISIT_SHL = 44 in "visit", "shift";
    VISIT_COPY = 46 in "visit", "copy";
    VISIT_OUTPUT = 48 in "visit", "output has no value";
    ADD_BOTH = 54 in "fold_add", "both operands constant";
    ADD_COMPUTE = 56 in "fold_add", "wrapping add";
    ADD_PARTIAL = 58 in "fold_add", "not foldable";
    MUL_BOTH = 62 in "fold_mul", "both operands constant";
    MUL_COMPUTE = 64 in "fold_mul", "wrapping mul";
    MUL_PARTIAL = 66 in "fold_mul", "not foldable";
    NEG_CONST = 70 in "fold_neg", "operand constant";
    NEG_COMPUTE = 72 in "fold_neg", "wrapping negate";
    NEG_COMPUTE_BAD = 73 in "fold_neg", "copy magnitude of operand";
    NEG_PARTIAL = 75 in "fold_neg", "not foldable";
    SHL_CONST = 79 in "fold_shl", "operand constant";
    SHL_COMPUTE = 81 in "fold_shl", "wrapping shift";
    SHL_PARTIAL = 83 in "fold_shl", "not foldable";
    COPY_CONST = 87 in "fold_copy", "copy of constant";
    COPY_PARTIAL = 89 in "fold_copy", "not foldable";
    REPLACE = 94 in "replace", "replace with constant";
    REPLACE_COUNT = 96 in "replace", "bump fold counter";
}

fn const_of(ir: &[Instr], op: Operand, trace: &mut Trace) -> Option<i64> {
    trace.hit(FILE, LOOKUP_ENTRY);
    match op {
        Operand::Param(_) => {
            trace.hit(FILE, LOOKUP_PARAM);
            None
        }
        Operand::Inst(j) => match ir[j] {
            Instr::Const(k) => {
                trace.hit(FILE, LOOKUP_HIT);
                Some(k)
            }
            _ => {
                trace.hit(FILE, LOOKUP_MISS);
                None
            }
        },
    }
}

pub fn run(ir: &mut Vec<Instr>, cx: &mut PassCx<'_>) -> Result<PassEffect, Crash> {
    let t = &mut *cx.trace;
    t.hit(FILE, RUN_ENTRY);
    let mut folded = 0;
    for i in 0..ir.len() {
        t.hit(FILE, RUN_SCAN);
        let value = match ir[i] {
            Instr::Const(_) => {
                t.hit(FILE, VISIT_CONST);
                None
            }
            Instr::Add(a, b) => {
                t.hit(FILE, VISIT_ADD);
                match (const_of(ir, a, t), const_of(ir, b, t)) {
                    (Some(x), Some(y)) => {
                        t.hit(FILE, ADD_BOTH);
                        t.hit(FILE, ADD_COMPUTE);
                        Some(x.wrapping_add(y))
                    }
                    _ => {
                        t.hit(FILE, ADD_PARTIAL);
                        None
                    }
                }
            }
            Instr::Mul(a, b) => {
                t.hit(FILE, VISIT_MUL);
                match (const_of(ir, a, t), const_of(ir, b, t)) {
                    (Some(x), Some(y)) => {
                        t.hit(FILE, MUL_BOTH);
                        t.hit(FILE, MUL_COMPUTE);
                        Some(x.wrapping_mul(y))
                    }
                    _ => {
                        t.hit(FILE, MUL_PARTIAL);
                        None
                    }
                }
            }
            Instr::Neg(a) => {
                t.hit(FILE, VISIT_NEG);
                match const_of(ir, a, t) {
                    Some(x) => {
                        t.hit(FILE, NEG_CONST);
                        if cx.defect == Some(Defect::ConstFoldNegSign) {
                            t.hit(FILE, NEG_COMPUTE_BAD);
                            Some(x)
                        } else {
                            t.hit(FILE, NEG_COMPUTE);
                            Some(x.wrapping_neg())
                        }
                    }
                    None => {
                        t.hit(FILE, NEG_PARTIAL);
                        None
                    }
                }
            }
            Instr::Shl(a, s) => {
                t.hit(FILE, VISIT_SHL);
                match const_of(ir, a, t) {
                    Some(x) => {
                        t.hit(FILE, SHL_CONST);
                        t.hit(FILE, SHL_COMPUTE);
                        Some(x.wrapping_shl(s))
                    }
                    None => {
                        t.hit(FILE, SHL_PARTIAL);
                        None
                    }
                }
            }
            Instr::Copy(a) => {
                t.hit(FILE, VISIT_COPY);
                match const_of(ir, a, t) {
                    Some(x) => {
                        t.hit(FILE, COPY_CONST);
                        Some(x)
                    }
                    None => {
                        t.hit(FILE, COPY_PARTIAL);
                        None
                    }
                }
            }
            Instr::Output(_) => {
                t.hit(FILE, VISIT_OUTPUT);
                None
            }
        };
        if let Some(k) = value {
            t.hit(FILE, REPLACE);
            t.hit(FILE, REPLACE_COUNT);
            ir[i] = Instr::Const(k);
            folded += 1;
        }
    }
    t.hit(FILE, RUN_DONE);
    t.hit(FILE, if folded > 0 { STAT_FOLDED } else { STAT_NONE });
    Ok(PassEffect {
        preserves_analyses: true,
    })
}
