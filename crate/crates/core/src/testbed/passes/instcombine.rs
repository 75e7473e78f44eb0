//! Peephole combining: copy propagation, algebraic identities and shift
//! chains. Rewrites in place.

use super::super::instrument::{pseudo_statements, Trace};
use super::super::ir::{Instr, Operand};
use super::{const_value, Crash, Defect, PassCx, PassEffect};

pseudo_statements! { "instcombine_lite", "passes/instcombine.mini";
    RUN_ENTRY = 10 in "run", "set up combiner";
    SCAN = 12 in "run", "for each instruction";
    PROPAGATE = 16 in "propagate_copies", "look through copies";
    PROPAGATE_HIT = 18 in "propagate_copies", "operand was a copy";
    VISIT_ADD = 23 in "combine", "visit add";
    ADD_ZERO = 25 in "combine_add", "x + 0 becomes x";
    ADD_NONE = 27 in "combine_add", "no identity";
    ADD_CONST_CONST = 28 in "combine_add", "both addends constant, left for folding";
    VISIT_MUL = 31 in "combine", "visit multiply";
    MUL_ONE = 33 in "combine_mul", "x * 1 becomes x";
    MUL_ZERO = 35 in "combine_mul", "x * 0 becomes 0";
    MUL_NONE = 37 in "combine_mul", "no identity";
    MUL_NEG_ONE = 38 in "combine_mul", "multiply by minus one";
    VISIT_NEG = 41 in "combine", "visit negation";
    NEG_NEG = 43 in "combine_neg", "double negation";
    NEG_NONE = 45 in "combine_neg", "no identity";
    NEG_CONST = 46 in "combine_neg", "negated constant, left for folding";
    VISIT_SHL = 49 in "combine", "visit shift";
    SHL_ZERO = 51 in "combine_shl", "shift by zero";
    SHL_CHAIN = 53 in "combine_shl", "shift of a shift";
    SHL_CHAIN_SUM = 55 in "combine_shl", "add shift amounts";
    SHL_CHAIN_MAX = 56 in "combine_shl", "take larger shift amount";
    SHL_CHAIN_OVERFLOW = 58 in "combine_shl", "combined shift clears value";
    SHL_CHAIN_ASSERT = 59 in "combine_shl", "assert combined shift in range";
    SHL_NONE = 61 in "combine_shl", "no identity";
    SHL_OF_CONST = 62 in "combine_shl", "shift of constant, left for folding";
    VISIT_OTHER = 65 in "combine", "nothing to combine";
    VISIT_COPY = 66 in "combine", "visit copy";
    VISIT_OUTPUT = 67 in "combine", "visit output";
    REPLACE = 69 in "run", "replace instruction";
    STAT_CHANGED = 73 in "run", "module changed";
    STAT_NONE = 75 in "run", "module unchanged";
    RUN_EXIT = 77 in "run", "combiner done";
}

fn propagate(ir: &[Instr], op: Operand, t: &mut Trace) -> Operand {
    t.hit(FILE, PROPAGATE);
    let mut op = op;
    while let Operand::Inst(j) = op {
        match ir[j] {
            Instr::Copy(src) => {
                t.hit(FILE, PROPAGATE_HIT);
                op = src;
            }
            _ => break,
        }
    }
    op
}

pub fn run(ir: &mut Vec<Instr>, cx: &mut PassCx<'_>) -> Result<PassEffect, Crash> {
    let defect = cx.defect;
    let t = &mut *cx.trace;
    t.hit(FILE, RUN_ENTRY);
    let mut changed = 0;
    for i in 0..ir.len() {
        t.hit(FILE, SCAN);
        let original = ir[i].clone();
        let current = original.map_operands(|op| match op {
            Operand::Inst(j) if matches!(ir[j], Instr::Copy(_)) => propagate(ir, op, t),
            _ => op,
        });
        let combined = match current {
            Instr::Add(a, b) => {
                t.hit(FILE, VISIT_ADD);
                if const_value(ir, b) == Some(0) {
                    t.hit(FILE, ADD_ZERO);
                    Instr::Copy(a)
                } else if const_value(ir, a) == Some(0) {
                    t.hit(FILE, ADD_ZERO);
                    Instr::Copy(b)
                } else {
                    t.hit(FILE, ADD_NONE);
                    if const_value(ir, a).is_some() && const_value(ir, b).is_some() {
                        t.hit(FILE, ADD_CONST_CONST);
                    }
                    current
                }
            }
            Instr::Mul(a, b) => {
                t.hit(FILE, VISIT_MUL);
                match (const_value(ir, a), const_value(ir, b)) {
                    (_, Some(1)) => {
                        t.hit(FILE, MUL_ONE);
                        Instr::Copy(a)
                    }
                    (Some(1), _) => {
                        t.hit(FILE, MUL_ONE);
                        Instr::Copy(b)
                    }
                    (Some(0), _) | (_, Some(0)) => {
                        t.hit(FILE, MUL_ZERO);
                        Instr::Const(0)
                    }
                    (x, y) => {
                        t.hit(FILE, MUL_NONE);
                        if x == Some(-1) || y == Some(-1) {
                            t.hit(FILE, MUL_NEG_ONE);
                        }
                        current
                    }
                }
            }
            Instr::Neg(a) => {
                t.hit(FILE, VISIT_NEG);
                match a {
                    Operand::Inst(j) if matches!(ir[j], Instr::Neg(_)) => {
                        t.hit(FILE, NEG_NEG);
                        let Instr::Neg(inner) = ir[j] else { unreachable!() };
                        Instr::Copy(inner)
                    }
                    _ => {
                        t.hit(FILE, NEG_NONE);
                        if const_value(ir, a).is_some() {
                            t.hit(FILE, NEG_CONST);
                        }
                        current
                    }
                }
            }
            Instr::Shl(a, s) => {
                t.hit(FILE, VISIT_SHL);
                if s == 0 {
                    t.hit(FILE, SHL_ZERO);
                    Instr::Copy(a)
                } else if let Operand::Inst(j) = a {
                    if let Instr::Shl(x, inner) = ir[j] {
                        t.hit(FILE, SHL_CHAIN);
                        let total = inner + s;
                        if total >= 64 {
                            if defect == Some(Defect::InstcombineShlOverflow) {
                                t.hit(FILE, SHL_CHAIN_ASSERT);
                                return Err(Crash {
                                    pass: "instcombine_lite",
                                    message: format!("assertion failed: shift amount {total} < 64"),
                                });
                            }
                            t.hit(FILE, SHL_CHAIN_OVERFLOW);
                            Instr::Const(0)
                        } else if defect == Some(Defect::InstcombineShlMerge) {
                            t.hit(FILE, SHL_CHAIN_MAX);
                            Instr::Shl(x, inner.max(s))
                        } else {
                            t.hit(FILE, SHL_CHAIN_SUM);
                            Instr::Shl(x, total)
                        }
                    } else {
                        t.hit(FILE, SHL_NONE);
                        if matches!(ir[j], Instr::Const(_)) {
                            t.hit(FILE, SHL_OF_CONST);
                        }
                        current
                    }
                } else {
                    t.hit(FILE, SHL_NONE);
                    current
                }
            }
            Instr::Copy(_) => {
                t.hit(FILE, VISIT_COPY);
                current
            }
            Instr::Output(_) => {
                t.hit(FILE, VISIT_OUTPUT);
                current
            }
            other => {
                t.hit(FILE, VISIT_OTHER);
                other
            }
        };
        if combined != original {
            t.hit(FILE, REPLACE);
            ir[i] = combined;
            changed += 1;
        }
    }
    t.hit(FILE, if changed > 0 { STAT_CHANGED } else { STAT_NONE });
    t.hit(FILE, RUN_EXIT);
    Ok(PassEffect { preserves_analyses: true })
}
