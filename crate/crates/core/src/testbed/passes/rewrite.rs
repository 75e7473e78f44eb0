//! Renumbering utilities shared by passes that delete or insert instructions.

use std::collections::BTreeMap;

use super::super::instrument::{pseudo_statements, Trace};
use super::super::ir::{Instr, Operand};
use super::Crash;

pseudo_statements! { "ir_rewrite", "ir/rewrite.mini";
    COMPACT_ENTRY = 10 in "compact", "allocate index map";
    COMPACT_DROP = 13 in "compact", "drop instruction";
    COMPACT_KEEP = 15 in "compact", "keep instruction";
    REMAP_OPERAND = 20 in "remap", "translate operand index";
    FOLLOW_REPLACEMENT = 23 in "remap", "follow replacement chain";
    DANGLING = 26 in "remap", "operand refers to dropped instruction";
    INSERT_ENTRY = 32 in "insert_consts", "allocate index map";
    INSERT_CONST = 35 in "insert_consts", "materialize constant";
    INSERT_REWRITE = 37 in "insert_consts", "emit rewritten instruction";
    INSERT_COPY = 39 in "insert_consts", "emit unchanged instruction";
}

/// Placeholder operand that `insert_consts` replaces with the new constant.
pub const NEW_CONST: Operand = Operand::Inst(usize::MAX);

fn remap(
    op: Operand,
    new_index: &[Option<usize>],
    replace: &[Option<Operand>],
    pass: &'static str,
    trace: &mut Trace,
) -> Result<Operand, Crash> {
    let mut op = op;
    loop {
        match op {
            Operand::Param(_) => return Ok(op),
            Operand::Inst(j) => {
                trace.hit(FILE, REMAP_OPERAND);
                if let Some(n) = new_index[j] {
                    return Ok(Operand::Inst(n));
                }
                match replace.get(j).copied().flatten() {
                    Some(r) => {
                        trace.hit(FILE, FOLLOW_REPLACEMENT);
                        op = r;
                    }
                    None => {
                        trace.hit(FILE, DANGLING);
                        return Err(Crash {
                            pass,
                            message: format!("operand %{j} refers to a deleted instruction"),
                        });
                    }
                }
            }
        }
    }
}

/// Drops instructions with `keep[i] == false`. Uses of a dropped instruction
/// are redirected through `replace[i]`; a use with no replacement is a crash.
pub fn compact(
    ir: &[Instr],
    keep: &[bool],
    replace: &[Option<Operand>],
    pass: &'static str,
    trace: &mut Trace,
) -> Result<Vec<Instr>, Crash> {
    trace.hit(FILE, COMPACT_ENTRY);
    let mut new_index = vec![None; ir.len()];
    let mut out = Vec::with_capacity(ir.len());
    for (i, ins) in ir.iter().enumerate() {
        if !keep[i] {
            trace.hit(FILE, COMPACT_DROP);
            continue;
        }
        trace.hit(FILE, COMPACT_KEEP);
        let mut err = None;
        let mapped = ins.map_operands(|op| match remap(op, &new_index, replace, pass, trace) {
            Ok(o) => o,
            Err(e) => {
                err.get_or_insert(e);
                op
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        new_index[i] = Some(out.len());
        out.push(mapped);
    }
    Ok(out)
}

/// Rewrites instruction `i` for each `(i, (k, template))` in `plan`: a
/// `Const(k)` is inserted just before it and `template` (written against the
/// old numbering, with `NEW_CONST` naming the constant) replaces it.
pub fn insert_consts(ir: &[Instr], plan: &BTreeMap<usize, (i64, Instr)>, trace: &mut Trace) -> Vec<Instr> {
    trace.hit(FILE, INSERT_ENTRY);
    let mut new_index: Vec<usize> = Vec::with_capacity(ir.len());
    let mut out = Vec::with_capacity(ir.len() + plan.len());
    for (i, ins) in ir.iter().enumerate() {
        let map = |op: Operand, konst: Option<usize>, trace: &mut Trace| match op {
            NEW_CONST => Operand::Inst(konst.expect("constant materialized")),
            Operand::Inst(j) => {
                trace.hit(FILE, REMAP_OPERAND);
                Operand::Inst(new_index[j])
            }
            p => p,
        };
        let emitted = if let Some((k, template)) = plan.get(&i) {
            trace.hit(FILE, INSERT_CONST);
            let kidx = out.len();
            out.push(Instr::Const(*k));
            trace.hit(FILE, INSERT_REWRITE);
            template.map_operands(|op| map(op, Some(kidx), trace))
        } else {
            trace.hit(FILE, INSERT_COPY);
            ins.map_operands(|op| map(op, None, trace))
        };
        new_index.push(out.len());
        out.push(emitted);
    }
    out
}
