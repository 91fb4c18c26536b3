//! Explicit loads and stores.
//!
//! IR may read and write DRAM inline (`@evk+3` as an operand, `@out+0 = …`
//! as a destination). Before scheduling and allocation every such access
//! becomes a separate `load` or `store`; the streaming pass later folds the
//! single-consumer ones back.

use crate::ir::{Dst, Instr, Program, Reg, Src, VecInstr, VecOp};

/// Returns the number of loads and stores inserted.
pub fn materialize(p: &mut Program) -> usize {
    assert!(!p.form.is_physical(), "materialization runs on SSA programs");
    let mut next = p.next_vreg();
    let mut fresh = || {
        let r = Reg::Virt(next);
        next += 1;
        r
    };
    let mut added = 0;
    let mut out = Vec::with_capacity(p.instrs.len());
    for ins in std::mem::take(&mut p.instrs) {
        let Instr::Vec(mut v) = ins else {
            out.push(ins);
            continue;
        };
        let keep_src = v.op == VecOp::Load;
        let keep_dst = v.op == VecOp::Store;
        if !keep_src {
            for s in v.srcs.iter_mut() {
                if let Src::Mem(a) = *s {
                    let t = fresh();
                    out.push(Instr::Vec(VecInstr::new(VecOp::Load, Dst::Reg(t), vec![Src::Mem(a)], v.modulus)));
                    added += 1;
                    *s = Src::Reg(t);
                }
            }
        }
        if !keep_dst {
            if let Dst::Mem(a) = v.dst {
                let t = fresh();
                v.dst = Dst::Reg(t);
                let m = v.modulus;
                out.push(Instr::Vec(v));
                out.push(Instr::Vec(VecInstr::new(VecOp::Store, Dst::Mem(a), vec![Src::Reg(t)], m)));
                added += 1;
                continue;
            }
        }
        out.push(Instr::Vec(v));
    }
    p.instrs = out;
    added
}
