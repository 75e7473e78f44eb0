//! Common subexpression elimination over value-numbering keys. Multiplies and
//! shifts are keyed by their scale fact so `x * 8` and `x << 3` unify.
//! Duplicates are deleted and the module is compacted.

use std::collections::HashMap;

use super::super::instrument::pseudo_statements;
use super::super::ir::{Instr, Operand};
use super::scale::fact_at;
use super::{rewrite, Crash, Defect, PassCx, PassEffect};

pseudo_statements! { "cse", "passes/cse.mini";
    RUN_ENTRY = 10 in "run", "set up value table";
    EMPTY_MODULE = 11 in "run", "empty module";
    QUERY_FACTS = 12 in "run", "request scale analysis";
    SCAN = 14 in "run", "for each instruction";
    REMAP = 18 in "canonicalize", "rewrite operands to leaders";
    REMAP_HIT = 20 in "canonicalize", "operand had a leader";
    CANON_PARAM = 21 in "canonicalize", "parameter operand";
    CANON_NO_LEADER = 22 in "canonicalize", "operand leads itself";
    KEY_CONST = 25 in "value_key", "key constant";
    KEY_ADD = 27 in "value_key", "key add";
    KEY_ADD_SWAP = 29 in "value_key", "order commutative operands";
    KEY_MUL_SCALED = 31 in "value_key", "key multiply by scale";
    KEY_MUL_UNIT = 32 in "value_key", "scale of one";
    KEY_MUL_PLAIN = 33 in "value_key", "key opaque multiply";
    KEY_MUL_SWAP = 35 in "value_key", "order commutative operands";
    KEY_NEG = 37 in "value_key", "key negation";
    KEY_NEG_CONST = 38 in "value_key", "negation of a constant";
    KEY_SHL_SCALED = 39 in "value_key", "key shift by scale";
    KEY_SHL_OPERAND = 40 in "value_key", "key shift by operand only";
    KEY_SHL_ZERO = 41 in "value_key", "shift by zero";
    KEY_COPY = 42 in "value_key", "key copy as its source";
    SKIP_OUTPUT = 44 in "value_key", "outputs are never unified";
    TABLE_LOOKUP = 50 in "run", "probe value table";
    TABLE_HIT = 52 in "run", "found leader";
    TABLE_HIT_ADJACENT = 53 in "run", "leader is the previous instruction";
    TABLE_INSERT = 54 in "run", "record new leader";
    RECORD_REPLACEMENT = 56 in "run", "schedule duplicate for removal";
    COMPACT = 60 in "run", "compact module";
    NO_CHANGE = 62 in "run", "nothing removed";
    PRESERVE_DROP = 66 in "preserved", "scale analysis invalidated by renumbering";
    PRESERVE_ALL = 68 in "preserved", "report all analyses preserved";
    STAT_REMOVED = 72 in "run", "bump removed counter";
    FINISH = 74 in "run", "release value table";
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Const(i64),
    Add(Operand, Operand),
    Scaled(Operand, i64),
    Mul(Operand, Operand),
    Neg(Operand),
    ShlOperand(Operand),
    Copy(Operand),
}

fn ordered(a: Operand, b: Operand) -> (Operand, Operand) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn run(ir: &mut Vec<Instr>, cx: &mut PassCx<'_>) -> Result<PassEffect, Crash> {
    cx.trace.hit(FILE, RUN_ENTRY);
    cx.trace.hit(FILE, QUERY_FACTS);
    let facts = cx.analyses.scale_facts(ir, cx.trace);
    let t = &mut *cx.trace;

    let n = ir.len();
    let mut leader: Vec<Option<Operand>> = vec![None; n];
    let mut keep = vec![true; n];
    let mut table: HashMap<Key, usize> = HashMap::new();
    let canon = |op: Operand, leader: &Vec<Option<Operand>>, t: &mut super::Trace| -> Operand {
        t.hit(FILE, REMAP);
        match op {
            Operand::Inst(j) => match leader[j] {
                Some(l) => {
                    t.hit(FILE, REMAP_HIT);
                    l
                }
                None => {
                    t.hit(FILE, CANON_NO_LEADER);
                    op
                }
            },
            p => {
                t.hit(FILE, CANON_PARAM);
                p
            }
        }
    };
    if n == 0 {
        t.hit(FILE, EMPTY_MODULE);
    }
    let mut removed = 0;
    for i in 0..n {
        t.hit(FILE, SCAN);
        let key = match ir[i] {
            Instr::Const(k) => {
                t.hit(FILE, KEY_CONST);
                Key::Const(k)
            }
            Instr::Add(a, b) => {
                t.hit(FILE, KEY_ADD);
                let (a, b) = (canon(a, &leader, t), canon(b, &leader, t));
                if b < a {
                    t.hit(FILE, KEY_ADD_SWAP);
                }
                let (x, y) = ordered(a, b);
                Key::Add(x, y)
            }
            Instr::Mul(a, b) => match fact_at(&facts, i, t) {
                Some(f) => {
                    t.hit(FILE, KEY_MUL_SCALED);
                    if f.factor == 1 {
                        t.hit(FILE, KEY_MUL_UNIT);
                    }
                    Key::Scaled(canon(f.base, &leader, t), f.factor)
                }
                None => {
                    t.hit(FILE, KEY_MUL_PLAIN);
                    let (a, b) = (canon(a, &leader, t), canon(b, &leader, t));
                    if b < a {
                        t.hit(FILE, KEY_MUL_SWAP);
                    }
                    let (x, y) = ordered(a, b);
                    Key::Mul(x, y)
                }
            },
            Instr::Neg(a) => {
                t.hit(FILE, KEY_NEG);
                let a = canon(a, &leader, t);
                if matches!(a, Operand::Inst(j) if matches!(ir[j], Instr::Const(_))) {
                    t.hit(FILE, KEY_NEG_CONST);
                }
                Key::Neg(a)
            }
            Instr::Shl(a, s) => {
                if s == 0 {
                    t.hit(FILE, KEY_SHL_ZERO);
                }
                if cx.defect == Some(Defect::CseShlKey) {
                    t.hit(FILE, KEY_SHL_OPERAND);
                    Key::ShlOperand(canon(a, &leader, t))
                } else {
                    t.hit(FILE, KEY_SHL_SCALED);
                    Key::Scaled(canon(a, &leader, t), 1i64.wrapping_shl(s))
                }
            }
            Instr::Copy(a) => {
                t.hit(FILE, KEY_COPY);
                Key::Copy(canon(a, &leader, t))
            }
            Instr::Output(_) => {
                t.hit(FILE, SKIP_OUTPUT);
                continue;
            }
        };
        t.hit(FILE, TABLE_LOOKUP);
        match table.get(&key) {
            Some(&l) => {
                t.hit(FILE, TABLE_HIT);
                if l + 1 == i {
                    t.hit(FILE, TABLE_HIT_ADJACENT);
                }
                t.hit(FILE, RECORD_REPLACEMENT);
                leader[i] = Some(Operand::Inst(l));
                keep[i] = false;
                removed += 1;
            }
            None => {
                t.hit(FILE, TABLE_INSERT);
                table.insert(key, i);
            }
        }
    }
    t.hit(FILE, FINISH);
    if removed == 0 {
        t.hit(FILE, NO_CHANGE);
        return Ok(PassEffect { preserves_analyses: true });
    }
    t.hit(FILE, STAT_REMOVED);
    t.hit(FILE, COMPACT);
    *ir = rewrite::compact(ir, &keep, &leader, "cse", t)?;
    if cx.defect == Some(Defect::CseStalePreserve) {
        t.hit(FILE, PRESERVE_ALL);
        Ok(PassEffect { preserves_analyses: true })
    } else {
        t.hit(FILE, PRESERVE_DROP);
        Ok(PassEffect { preserves_analyses: false })
    }
}
