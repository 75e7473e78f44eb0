//! Strength reduction: multiplies by special factors become copies,
//! negations or shifts. Factors come from the cached scale analysis.

use super::super::instrument::{pseudo_statements, Trace};
use super::super::ir::{Instr, Operand};
use super::scale::fact_at;
use super::{Crash, Defect, PassCx, PassEffect};

pseudo_statements! { "strength_reduce", "passes/strength_reduce.mini";
    RUN_ENTRY = 10 in "run", "set up reduction state";
    QUERY_FACTS = 12 in "run", "request scale analysis";
    SCAN = 14 in "run", "for each instruction";
    SKIP_OTHER = 16 in "run", "instruction kind not reducible";
    MUL_VISIT = 20 in "reduce_mul", "visit multiply";
    MUL_NO_FACT = 22 in "reduce_mul", "no scale fact";
    MUL_FACT = 24 in "reduce_mul", "scale fact available";
    GUARD_BASE = 26 in "reduce_mul", "check base dominates";
    GUARD_REJECT = 28 in "reduce_mul", "base does not dominate";
    CLASSIFY = 31 in "classify_factor", "classify factor";
    FACTOR_ZERO = 33 in "classify_factor", "zero factor left to instcombine";
    FACTOR_ONE = 35 in "classify_factor", "unit factor";
    FACTOR_MINUS_ONE = 37 in "classify_factor", "minus one factor";
    FACTOR_NEG_POW2 = 39 in "classify_factor", "negative power of two";
    FACTOR_POW2 = 41 in "classify_factor", "power of two";
    FACTOR_OTHER = 43 in "classify_factor", "general factor";
    LOG2_ENTRY = 47 in "exact_log2", "start bit scan";
    LOG2_STEP = 49 in "exact_log2", "shift factor right";
    LOG2_DONE = 51 in "exact_log2", "found exponent";
    LOG2_WIDE = 52 in "exact_log2", "adjust exponent for wide factor";
    POPCOUNT = 56 in "decompose", "count set bits";
    DECOMPOSE_TWO = 58 in "decompose", "two-term shift sum (not profitable)";
    DECOMPOSE_MANY = 60 in "decompose", "too many terms";
    EMIT_COPY = 64 in "emit", "replace with copy";
    EMIT_NEG = 66 in "emit", "replace with negation";
    EMIT_SHL = 68 in "emit", "replace with shift";
    ADD_VISIT = 72 in "reduce_add", "visit add";
    ADD_SELF = 74 in "reduce_add", "x + x becomes x << 1";
    ADD_DISTINCT = 76 in "reduce_add", "operands differ";
    STAT_REDUCED = 80 in "run", "module changed";
    STAT_NONE = 82 in "run", "module unchanged";
}

fn exact_log2(mut factor: i64, wide_bug: bool, t: &mut Trace) -> u32 {
    t.hit(FILE, LOG2_ENTRY);
    let original = factor;
    let mut shift = 0;
    while factor > 1 {
        t.hit(FILE, LOG2_STEP);
        factor >>= 1;
        shift += 1;
    }
    t.hit(FILE, LOG2_DONE);
    if wide_bug && original >= 16 {
        t.hit(FILE, LOG2_WIDE);
        shift += 1;
    }
    shift
}

fn reduce_factor(base: Operand, factor: i64, wide_bug: bool, t: &mut Trace) -> Option<Instr> {
    t.hit(FILE, CLASSIFY);
    match factor {
        0 => {
            t.hit(FILE, FACTOR_ZERO);
            None
        }
        1 => {
            t.hit(FILE, FACTOR_ONE);
            t.hit(FILE, EMIT_COPY);
            Some(Instr::Copy(base))
        }
        -1 => {
            t.hit(FILE, FACTOR_MINUS_ONE);
            t.hit(FILE, EMIT_NEG);
            Some(Instr::Neg(base))
        }
        f if f > 1 && f.count_ones() == 1 => {
            t.hit(FILE, FACTOR_POW2);
            let s = exact_log2(f, wide_bug, t);
            t.hit(FILE, EMIT_SHL);
            Some(Instr::Shl(base, s.min(63)))
        }
        f if f < 0 && f.wrapping_neg().count_ones() == 1 => {
            t.hit(FILE, FACTOR_NEG_POW2);
            None
        }
        f => {
            t.hit(FILE, FACTOR_OTHER);
            t.hit(FILE, POPCOUNT);
            if f.count_ones() == 2 {
                t.hit(FILE, DECOMPOSE_TWO);
            } else {
                t.hit(FILE, DECOMPOSE_MANY);
            }
            None
        }
    }
}

pub fn run(ir: &mut Vec<Instr>, cx: &mut PassCx<'_>) -> Result<PassEffect, Crash> {
    cx.trace.hit(FILE, RUN_ENTRY);
    cx.trace.hit(FILE, QUERY_FACTS);
    let facts = cx.analyses.scale_facts(ir, cx.trace);
    let wide_bug = cx.has(Defect::StrengthPow2Shift);
    let t = &mut *cx.trace;
    let mut reduced = 0;
    for i in 0..ir.len() {
        t.hit(FILE, SCAN);
        let replacement = match ir[i] {
            Instr::Mul(..) => {
                t.hit(FILE, MUL_VISIT);
                match fact_at(&facts, i, t) {
                    None => {
                        t.hit(FILE, MUL_NO_FACT);
                        None
                    }
                    Some(f) => {
                        t.hit(FILE, MUL_FACT);
                        t.hit(FILE, GUARD_BASE);
                        let dominated = match f.base {
                            Operand::Inst(j) => j < i && !matches!(ir[j], Instr::Output(_)),
                            Operand::Param(p) => p < cx.params,
                        };
                        if dominated {
                            reduce_factor(f.base, f.factor, wide_bug, t)
                        } else {
                            t.hit(FILE, GUARD_REJECT);
                            None
                        }
                    }
                }
            }
            Instr::Add(a, b) => {
                t.hit(FILE, ADD_VISIT);
                if a == b {
                    t.hit(FILE, ADD_SELF);
                    t.hit(FILE, EMIT_SHL);
                    Some(Instr::Shl(a, 1))
                } else {
                    t.hit(FILE, ADD_DISTINCT);
                    None
                }
            }
            _ => {
                t.hit(FILE, SKIP_OTHER);
                None
            }
        };
        if let Some(r) = replacement {
            ir[i] = r;
            reduced += 1;
        }
    }
    t.hit(FILE, if reduced > 0 { STAT_REDUCED } else { STAT_NONE });
    Ok(PassEffect { preserves_analyses: true })
}
