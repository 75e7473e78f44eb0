//! Reassociation: merges constant addends of nested adds and factors sums of
//! scaled values with a common base. Both rewrites materialize a new constant,
//! which renumbers the module.

use std::collections::BTreeMap;

use super::super::instrument::{pseudo_statements, Trace};
use super::super::ir::{Instr, Operand};
use super::rewrite::{self, NEW_CONST};
use super::scale::{fact_at, ScaleFact};
use super::{const_value, Crash, Defect, PassCx, PassEffect};

pseudo_statements! { "reassociate", "passes/reassociate.mini";
    RUN_ENTRY = 10 in "run", "set up rewrite plan";
    QUERY_FACTS = 12 in "run", "request scale analysis";
    SCAN = 14 in "run", "for each instruction";
    SKIP_NON_ADD = 16 in "run", "only adds are reassociated";
    ADD_PARAMS = 17 in "run", "both operands are parameters";
    MATCH_NESTED = 21 in "merge_addends", "look for (x + c1) + c2";
    OUTER_CONST = 23 in "merge_addends", "outer addend constant";
    INNER_NOT_INST = 24 in "merge_addends", "inner value is a parameter";
    INNER_ADD = 25 in "merge_addends", "inner value is an add";
    INNER_NOT_ADD = 26 in "merge_addends", "inner value is not an add";
    INNER_CONST = 27 in "merge_addends", "inner addend constant";
    MERGE_SUM = 29 in "merge_addends", "combine addends";
    MERGE_DIFF = 30 in "merge_addends", "combine addends by subtraction";
    NO_NESTED = 32 in "merge_addends", "no nested constant add";
    MATCH_FACTOR = 37 in "factor_common", "look for a*k1 + a*k2";
    FACTOR_PARAM = 38 in "factor_common", "term is a parameter";
    FACTOR_KIND = 39 in "factor_common", "both terms scale instructions";
    FACTOR_NOT_SCALED = 40 in "factor_common", "term is not a scale";
    FACTOR_FACTS = 41 in "factor_common", "both terms have scale facts";
    FACTOR_NO_FACT = 42 in "factor_common", "missing scale fact";
    FACTOR_SAME_BASE = 43 in "factor_common", "terms share a base";
    FACTOR_BASE_DIFF = 44 in "factor_common", "bases differ";
    FACTOR_DOMINATES = 45 in "factor_common", "base precedes the sum";
    FACTOR_LATE_BASE = 46 in "factor_common", "base does not precede the sum";
    FACTOR_BUILD = 47 in "factor_common", "sum the factors";
    FACTOR_MISMATCH = 49 in "factor_common", "terms do not factor";
    PLAN_REWRITE = 54 in "run", "schedule rewrite";
    APPLY = 58 in "run", "materialize constants";
    NO_CHANGE = 60 in "run", "nothing to reassociate";
    PRESERVE_DROP = 64 in "preserved", "scale analysis invalidated by renumbering";
    PRESERVE_ALL = 66 in "preserved", "report all analyses preserved";
    RUN_EXIT = 68 in "run", "release rewrite plan";
}

fn merge_addends(ir: &[Instr], a: Operand, b: Operand, buggy: bool, t: &mut Trace) -> Option<(i64, Instr)> {
    t.hit(FILE, MATCH_NESTED);
    for (inner, outer) in [(a, b), (b, a)] {
        let Some(c2) = const_value(ir, outer) else { continue };
        t.hit(FILE, OUTER_CONST);
        let Operand::Inst(j) = inner else {
            t.hit(FILE, INNER_NOT_INST);
            continue;
        };
        let Instr::Add(x, y) = ir[j] else {
            t.hit(FILE, INNER_NOT_ADD);
            continue;
        };
        t.hit(FILE, INNER_ADD);
        for (base, cop) in [(x, y), (y, x)] {
            if let Some(c1) = const_value(ir, cop) {
                t.hit(FILE, INNER_CONST);
                let k = if buggy {
                    t.hit(FILE, MERGE_DIFF);
                    c1.wrapping_sub(c2)
                } else {
                    t.hit(FILE, MERGE_SUM);
                    c1.wrapping_add(c2)
                };
                return Some((k, Instr::Add(base, NEW_CONST)));
            }
        }
    }
    t.hit(FILE, NO_NESTED);
    None
}

fn factor_common(
    ir: &[Instr],
    at: usize,
    a: Operand,
    b: Operand,
    facts: &[Option<ScaleFact>],
    t: &mut Trace,
) -> Option<(i64, Instr)> {
    t.hit(FILE, MATCH_FACTOR);
    let (Operand::Inst(i), Operand::Inst(j)) = (a, b) else {
        t.hit(FILE, FACTOR_PARAM);
        t.hit(FILE, FACTOR_MISMATCH);
        return None;
    };
    let scaled = |ins: &Instr| matches!(ins, Instr::Mul(..) | Instr::Shl(..));
    if !(scaled(&ir[i]) && scaled(&ir[j])) {
        t.hit(FILE, FACTOR_NOT_SCALED);
        t.hit(FILE, FACTOR_MISMATCH);
        return None;
    }
    t.hit(FILE, FACTOR_KIND);
    let (Some(fa), Some(fb)) = (fact_at(facts, i, t), fact_at(facts, j, t)) else {
        t.hit(FILE, FACTOR_NO_FACT);
        t.hit(FILE, FACTOR_MISMATCH);
        return None;
    };
    t.hit(FILE, FACTOR_FACTS);
    if fa.base != fb.base {
        t.hit(FILE, FACTOR_BASE_DIFF);
        t.hit(FILE, FACTOR_MISMATCH);
        return None;
    }
    t.hit(FILE, FACTOR_SAME_BASE);
    if let Operand::Inst(base) = fa.base {
        if base >= at || matches!(ir[base], Instr::Output(_)) {
            t.hit(FILE, FACTOR_LATE_BASE);
            t.hit(FILE, FACTOR_MISMATCH);
            return None;
        }
    }
    t.hit(FILE, FACTOR_DOMINATES);
    t.hit(FILE, FACTOR_BUILD);
    Some((fa.factor.wrapping_add(fb.factor), Instr::Mul(fa.base, NEW_CONST)))
}

pub fn run(ir: &mut Vec<Instr>, cx: &mut PassCx<'_>) -> Result<PassEffect, Crash> {
    cx.trace.hit(FILE, RUN_ENTRY);
    cx.trace.hit(FILE, QUERY_FACTS);
    let facts = cx.analyses.scale_facts(ir, cx.trace);
    let buggy_merge = cx.has(Defect::ReassocConstMerge);
    let t = &mut *cx.trace;
    let mut plan = BTreeMap::new();
    for i in 0..ir.len() {
        t.hit(FILE, SCAN);
        let Instr::Add(a, b) = ir[i] else {
            t.hit(FILE, SKIP_NON_ADD);
            continue;
        };
        if matches!((a, b), (Operand::Param(_), Operand::Param(_))) {
            t.hit(FILE, ADD_PARAMS);
        }
        let rewrite = merge_addends(ir, a, b, buggy_merge, t).or_else(|| factor_common(ir, i, a, b, &facts, t));
        if let Some(r) = rewrite {
            t.hit(FILE, PLAN_REWRITE);
            plan.insert(i, r);
        }
    }
    t.hit(FILE, RUN_EXIT);
    if plan.is_empty() {
        t.hit(FILE, NO_CHANGE);
        return Ok(PassEffect { preserves_analyses: true });
    }
    t.hit(FILE, APPLY);
    *ir = rewrite::insert_consts(ir, &plan, t);
    if cx.defect == Some(Defect::ReassocStalePreserve) {
        t.hit(FILE, PRESERVE_ALL);
        Ok(PassEffect { preserves_analyses: true })
    } else {
        t.hit(FILE, PRESERVE_DROP);
        Ok(PassEffect { preserves_analyses: false })
    }
}
