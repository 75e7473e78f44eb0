use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operand {
    Param(usize),
    Inst(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instr {
    Const(i64),
    Add(Operand, Operand),
    Mul(Operand, Operand),
    Neg(Operand),
    Shl(Operand, u32),
    Copy(Operand),
    Output(Operand),
}

impl Instr {
    pub fn operands(&self) -> Vec<Operand> {
        match *self {
            Instr::Const(_) => vec![],
            Instr::Add(a, b) | Instr::Mul(a, b) => vec![a, b],
            Instr::Neg(a) | Instr::Shl(a, _) | Instr::Copy(a) | Instr::Output(a) => vec![a],
        }
    }

    pub fn map_operands(&self, mut f: impl FnMut(Operand) -> Operand) -> Instr {
        match *self {
            Instr::Const(k) => Instr::Const(k),
            Instr::Add(a, b) => Instr::Add(f(a), f(b)),
            Instr::Mul(a, b) => Instr::Mul(f(a), f(b)),
            Instr::Neg(a) => Instr::Neg(f(a)),
            Instr::Shl(a, k) => Instr::Shl(f(a), k),
            Instr::Copy(a) => Instr::Copy(f(a)),
            Instr::Output(a) => Instr::Output(f(a)),
        }
    }
}

/// Straight-line program over 64-bit wrapping integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniProgram {
    pub params: Vec<i64>,
    pub instructions: Vec<Instr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidProgram(pub String);

impl fmt::Display for InvalidProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid program: {}", self.0)
    }
}

impl MiniProgram {
    pub fn validate(&self) -> Result<(), InvalidProgram> {
        validate_instructions(&self.instructions, self.params.len())
    }
}

pub fn validate_instructions(instrs: &[Instr], params: usize) -> Result<(), InvalidProgram> {
    let mut outputs = 0;
    for (i, ins) in instrs.iter().enumerate() {
        if let Instr::Shl(_, k) = ins {
            if *k >= 64 {
                return Err(InvalidProgram(format!("shift {k} at {i}")));
            }
        }
        if matches!(ins, Instr::Output(_)) {
            outputs += 1;
        }
        for op in ins.operands() {
            match op {
                Operand::Param(p) if p >= params => {
                    return Err(InvalidProgram(format!("param {p} at {i}")))
                }
                Operand::Inst(j) if j >= i => {
                    return Err(InvalidProgram(format!("forward operand {j} at {i}")))
                }
                Operand::Inst(j) if matches!(instrs[j], Instr::Output(_)) => {
                    return Err(InvalidProgram(format!("operand {j} at {i} is an output")))
                }
                _ => {}
            }
        }
    }
    if outputs == 0 {
        return Err(InvalidProgram("no output".into()));
    }
    Ok(())
}

/// Reference semantics. The program must be valid.
pub fn interpret(program: &MiniProgram) -> Vec<i64> {
    evaluate(&program.instructions, &program.params)
}

pub fn evaluate(instrs: &[Instr], params: &[i64]) -> Vec<i64> {
    let mut values = Vec::with_capacity(instrs.len());
    let mut out = Vec::new();
    for ins in instrs {
        let get = |op: Operand, values: &Vec<i64>| match op {
            Operand::Param(p) => params[p],
            Operand::Inst(j) => values[j],
        };
        let v = match *ins {
            Instr::Const(k) => k,
            Instr::Add(a, b) => get(a, &values).wrapping_add(get(b, &values)),
            Instr::Mul(a, b) => get(a, &values).wrapping_mul(get(b, &values)),
            Instr::Neg(a) => get(a, &values).wrapping_neg(),
            Instr::Shl(a, k) => get(a, &values).wrapping_shl(k),
            Instr::Copy(a) => get(a, &values),
            Instr::Output(a) => {
                let v = get(a, &values);
                out.push(v);
                0
            }
        };
        values.push(v);
    }
    out
}

/// Random valid program used by differential tests. Biased toward the
/// shapes the optimization passes look for.
pub fn random_program<R: Rng>(rng: &mut R, max_len: usize) -> MiniProgram {
    let nparams = rng.gen_range(1..=3);
    let params = (0..nparams).map(|_| rng.gen_range(-1000..1000)).collect();
    let len = rng.gen_range(1..=max_len.max(1));
    let mut instrs: Vec<Instr> = Vec::new();
    let mut values: Vec<usize> = Vec::new();
    let pick = |rng: &mut R, values: &Vec<usize>| -> Operand {
        if values.is_empty() || rng.gen_bool(0.3) {
            Operand::Param(rng.gen_range(0..nparams))
        } else {
            Operand::Inst(values[rng.gen_range(0..values.len())])
        }
    };
    for _ in 0..len {
        let ins = match rng.gen_range(0..9) {
            0 => Instr::Const(*[0, 1, -1, 2, 3, 4, 8, 16, 7, -5]
                .get(rng.gen_range(0..10))
                .unwrap()),
            1 | 2 => Instr::Add(pick(rng, &values), pick(rng, &values)),
            3 | 4 => Instr::Mul(pick(rng, &values), pick(rng, &values)),
            5 => Instr::Neg(pick(rng, &values)),
            6 => Instr::Shl(pick(rng, &values), rng.gen_range(0..64)),
            7 => Instr::Copy(pick(rng, &values)),
            _ => Instr::Output(pick(rng, &values)),
        };
        if !matches!(ins, Instr::Output(_)) {
            values.push(instrs.len());
        }
        instrs.push(ins);
    }
    let last = pick(rng, &values);
    instrs.push(Instr::Output(last));
    MiniProgram {
        params,
        instructions: instrs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use Instr::*;
    use Operand::*;

    #[test]
    fn interpret_examples() {
        let p = MiniProgram {
            params: vec![],
            instructions: vec![Const(2), Const(3), Add(Inst(0), Inst(1)), Output(Inst(2))],
        };
        assert_eq!(interpret(&p), vec![5]);
        let q = MiniProgram {
            params: vec![],
            instructions: vec![Const(7), Output(Inst(0))],
        };
        assert_eq!(interpret(&q), vec![7]);
    }

    #[test]
    fn arithmetic_wraps() {
        let p = MiniProgram {
            params: vec![i64::MAX],
            instructions: vec![Const(1), Add(Param(0), Inst(0)), Shl(Param(0), 63), Output(Inst(1)), Output(Inst(2))],
        };
        assert_eq!(interpret(&p), vec![i64::MIN, i64::MIN]);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let fwd = MiniProgram { params: vec![], instructions: vec![Copy(Inst(1)), Const(1), Output(Inst(1))] };
        assert!(fwd.validate().is_err());
        let no_out = MiniProgram { params: vec![], instructions: vec![Const(1)] };
        assert!(no_out.validate().is_err());
        let out_use = MiniProgram { params: vec![1], instructions: vec![Output(Param(0)), Copy(Inst(0)), Output(Inst(1))] };
        assert!(out_use.validate().is_err());
    }

    #[test]
    fn random_programs_are_valid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            random_program(&mut rng, 20).validate().unwrap();
        }
    }
}
