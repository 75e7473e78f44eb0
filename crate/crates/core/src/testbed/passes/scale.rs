//! Scale analysis: for each instruction, a fact `value(i) = value(base) * factor`
//! when one can be read off the instruction. Results are cached across passes
//! until a pass reports that it did not preserve them.

use super::super::instrument::{pseudo_statements, Trace};
use super::super::ir::{Instr, Operand};
use super::const_value;

pseudo_statements! { "scale_analysis", "analysis/scale.mini";
    QUERY = 12 in "scale_facts", "look up cached table";
    CACHE_HIT = 14 in "scale_facts", "return cached table";
    COMPUTE = 18 in "compute", "allocate fact table";
    VISIT = 20 in "compute", "for each instruction";
    MUL_RHS_CONST = 23 in "fact_mul", "rhs is a constant factor";
    MUL_LHS_CONST = 25 in "fact_mul", "lhs is a constant factor";
    MUL_OPAQUE = 27 in "fact_mul", "no constant factor";
    SHL = 31 in "fact_shl", "factor is 1 << amount";
    NEG = 35 in "fact_neg", "factor is -1";
    COPY = 38 in "fact_copy", "factor is 1";
    NONE = 41 in "compute", "no fact";
    STORE = 44 in "compute", "store table in cache";
    INVALIDATE = 50 in "invalidate", "drop cached table";
    FACT_LOOKUP = 55 in "fact_at", "index into table";
    FACT_OUT_OF_RANGE = 57 in "fact_at", "index past end of table";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleFact {
    pub base: Operand,
    pub factor: i64,
}

pub type ScaleTable = Vec<Option<ScaleFact>>;

#[derive(Debug, Default)]
pub struct AnalysisCache {
    scale: Option<ScaleTable>,
}

impl AnalysisCache {
    pub fn is_populated(&self) -> bool {
        self.scale.is_some()
    }

    pub fn scale_facts(&mut self, ir: &[Instr], trace: &mut Trace) -> ScaleTable {
        trace.hit(FILE, QUERY);
        if let Some(t) = &self.scale {
            trace.hit(FILE, CACHE_HIT);
            return t.clone();
        }
        trace.hit(FILE, COMPUTE);
        let table: ScaleTable = ir
            .iter()
            .map(|ins| {
                trace.hit(FILE, VISIT);
                let fact = compute_one(ir, ins, trace);
                if fact.is_none() {
                    trace.hit(FILE, NONE);
                }
                fact
            })
            .collect();
        trace.hit(FILE, STORE);
        self.scale = Some(table.clone());
        table
    }

    pub fn invalidate(&mut self, trace: &mut Trace) {
        if self.scale.take().is_some() {
            trace.hit(FILE, INVALIDATE);
        }
    }
}

fn compute_one(ir: &[Instr], ins: &Instr, trace: &mut Trace) -> Option<ScaleFact> {
    match *ins {
        Instr::Mul(a, b) => {
            if let Some(k) = const_value(ir, b) {
                trace.hit(FILE, MUL_RHS_CONST);
                Some(ScaleFact { base: a, factor: k })
            } else if let Some(k) = const_value(ir, a) {
                trace.hit(FILE, MUL_LHS_CONST);
                Some(ScaleFact { base: b, factor: k })
            } else {
                trace.hit(FILE, MUL_OPAQUE);
                None
            }
        }
        Instr::Shl(a, s) => {
            trace.hit(FILE, SHL);
            Some(ScaleFact { base: a, factor: 1i64.wrapping_shl(s) })
        }
        Instr::Neg(a) => {
            trace.hit(FILE, NEG);
            Some(ScaleFact { base: a, factor: -1 })
        }
        Instr::Copy(a) => {
            trace.hit(FILE, COPY);
            Some(ScaleFact { base: a, factor: 1 })
        }
        _ => None,
    }
}

pub fn fact_at(table: &[Option<ScaleFact>], index: usize, trace: &mut Trace) -> Option<ScaleFact> {
    trace.hit(FILE, FACT_LOOKUP);
    match table.get(index) {
        Some(f) => *f,
        None => {
            trace.hit(FILE, FACT_OUT_OF_RANGE);
            None
        }
    }
}
