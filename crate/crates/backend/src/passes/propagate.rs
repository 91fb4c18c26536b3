//! Copy and constant propagation.
//!
//! Removes register-to-register copies and the arithmetic identities
//! `mmul x, sm:1` and `mmad x, <form>:0`, rewriting every use to the original
//! value. Copies from or to DRAM are real data movement and stay.

use std::collections::HashMap;

use effact_core::MontgomeryForm;

use crate::ir::{Dst, Instr, Program, Reg, Src, VecOp};

/// The register an instruction merely forwards, if any.
fn forwarded(ins: &Instr) -> Option<Reg> {
    let v = ins.as_vec()?;
    if !matches!(v.dst, Dst::Reg(Reg::Virt(_))) || v.flags.cross || v.flags.absorb {
        return None;
    }
    let x = match v.srcs.first()? {
        Src::Reg(r @ Reg::Virt(_)) => *r,
        _ => return None,
    };
    let identity = match (v.op, v.imm()) {
        (VecOp::Copy, _) => true,
        (VecOp::Mmul, Some(c)) => c.value == 1 && c.form == MontgomeryForm::Sm,
        (VecOp::Mmad, Some(c)) => c.value == 0,
        _ => false,
    };
    identity.then_some(x)
}

/// Returns the number of instructions removed.
pub fn propagate(p: &mut Program) -> usize {
    assert!(!p.form.is_physical(), "propagation runs on SSA programs");
    let mut alias: HashMap<Reg, Reg> = HashMap::new();
    let before = p.instrs.len();
    let mut out = Vec::with_capacity(before);
    for mut ins in std::mem::take(&mut p.instrs) {
        ins.rewrite_uses(|r| alias.get(&r).copied().unwrap_or(r));
        if let Some(x) = forwarded(&ins) {
            let d = ins.defs()[0];
            alias.insert(d, x);
            continue;
        }
        out.push(ins);
    }
    p.instrs = out;
    before - p.instrs.len()
}
