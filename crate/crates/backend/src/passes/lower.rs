//! Lowering of IR to ISA-level SSA.
//!
//! Vector ops map one-to-one. A `bconv` from source limbs `x_j` (moduli
//! `q_j`) to targets `p_i` becomes the two-stage multiply-accumulate
//! sequence
//!
//! ```text
//! t_j  = mmul.bc  x_j, sm:[q̂_j⁻¹]_{q_j}                 |C| instructions
//! u_ij = mmul.x.bc t_j, sm:[q̂_j]_{p_i}                  |C|·|B|
//! y_i  = mmad.bc u_i0, u_i1, …   (ascending j)          (|C|−1)·|B|
//! ```
//!
//! with constants computed from the program's moduli.

use std::collections::HashMap;

use effact_core::rns::{mul_mod, pow_mod};
use effact_core::MontgomeryForm;
use thiserror::Error;

use crate::ir::{BconvInstr, Dst, Flags, Form, Imm, Instr, Program, Reg, Src, VecInstr, VecOp};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LowerError {
    #[error("lowering expects an IR program, found `{0}`")]
    Form(&'static str),
    #[error("instruction {0}: bconv source {1} has no known modulus")]
    UnknownSource(usize, Reg),
    #[error("instruction {0}: modulus q{1} appears in both bases or twice in one")]
    Overlap(usize, u16),
    #[error("instruction {0}: bconv has {1} destinations but {2} targets")]
    Arity(usize, usize, usize),
}

/// `∏_{k≠j} q_k mod m`.
fn qhat_mod(src: &[u64], j: usize, m: u64) -> u64 {
    src.iter()
        .enumerate()
        .filter(|(k, _)| *k != j)
        .fold(1 % m, |acc, (_, &q)| mul_mod(acc, q % m, m))
}

fn expand_bconv(
    pc: usize,
    b: &BconvInstr,
    p: &Program,
    reg_mod: &HashMap<Reg, u16>,
    next: &mut u32,
    out: &mut Vec<Instr>,
) -> Result<(), LowerError> {
    if b.dsts.len() != b.targets.len() {
        return Err(LowerError::Arity(pc, b.dsts.len(), b.targets.len()));
    }
    let src_idx = b
        .srcs
        .iter()
        .map(|r| reg_mod.get(r).copied().ok_or(LowerError::UnknownSource(pc, *r)))
        .collect::<Result<Vec<u16>, _>>()?;
    let mut seen = Vec::new();
    for &k in src_idx.iter().chain(&b.targets) {
        if seen.contains(&k) {
            return Err(LowerError::Overlap(pc, k));
        }
        seen.push(k);
    }
    let src_q: Vec<u64> = src_idx.iter().map(|&k| p.moduli[k as usize]).collect();
    let bc = Flags {
        bconv: true,
        ..Flags::default()
    };
    let cross = Flags { cross: true, ..bc };
    let mut fresh = || {
        let r = Reg::Virt(*next);
        *next += 1;
        r
    };
    let mut stage1 = Vec::with_capacity(src_q.len());
    for (j, (&x, &q)) in b.srcs.iter().zip(&src_q).enumerate() {
        let inv = pow_mod(qhat_mod(&src_q, j, q), q - 2, q);
        let t = fresh();
        let mut v = VecInstr::new(
            VecOp::Mmul,
            Dst::Reg(t),
            vec![Src::Reg(x), Src::Imm(Imm::new(inv, MontgomeryForm::Sm))],
            src_idx[j],
        );
        v.flags = bc;
        out.push(Instr::Vec(v));
        stage1.push(t);
    }
    for (&y, &ti) in b.dsts.iter().zip(&b.targets) {
        let pv = p.moduli[ti as usize];
        let mut acc: Option<Reg> = None;
        let last = stage1.len() - 1;
        for (j, &t) in stage1.iter().enumerate() {
            let c = qhat_mod(&src_q, j, pv);
            let u = if j == 0 && last == 0 { y } else { fresh() };
            let mut v = VecInstr::new(
                VecOp::Mmul,
                Dst::Reg(u),
                vec![Src::Reg(t), Src::Imm(Imm::new(c, MontgomeryForm::Sm))],
                ti,
            );
            v.flags = cross;
            out.push(Instr::Vec(v));
            acc = Some(match acc {
                None => u,
                Some(a) => {
                    let s = if j == last { y } else { fresh() };
                    let mut v = VecInstr::new(VecOp::Mmad, Dst::Reg(s), vec![Src::Reg(a), Src::Reg(u)], ti);
                    v.flags = bc;
                    out.push(Instr::Vec(v));
                    s
                }
            });
        }
    }
    Ok(())
}

pub fn lower(p: &Program) -> Result<Program, LowerError> {
    if p.form != Form::Ir {
        return Err(LowerError::Form(p.form.as_str()));
    }
    let reg_mod = p.reg_moduli();
    let mut next = p.next_vreg();
    let mut out = Vec::with_capacity(p.instrs.len());
    for (pc, ins) in p.instrs.iter().enumerate() {
        match ins {
            Instr::Bconv(b) => expand_bconv(pc, b, p, &reg_mod, &mut next, &mut out)?,
            other => out.push(other.clone()),
        }
    }
    Ok(Program {
        form: Form::Lowered,
        instrs: out,
        ..p.clone()
    })
}
