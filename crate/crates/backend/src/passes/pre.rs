//! Redundancy elimination by value numbering.
//!
//! Programs reaching this pass are straight-line SSA, so every lexically
//! identical pure expression seen earlier is available on all paths and a
//! later copy can reuse it. Expressions reading DRAM are forgotten when a
//! possibly aliasing write happens. Commutative operands are put in a
//! canonical order first.

use std::collections::HashMap;

use crate::ir::{Addr, Flags, Instr, Program, Reg, Src, VecOp};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Key {
    Vec {
        op: VecOp,
        srcs: Vec<Src>,
        modulus: u16,
        flags: Flags,
        step: i64,
    },
    Bconv {
        srcs: Vec<Reg>,
        targets: Vec<u16>,
    },
}

impl Key {
    fn reads(&self, a: &Addr) -> bool {
        match self {
            Key::Vec { srcs, .. } => srcs.iter().any(|s| matches!(s, Src::Mem(b) if b.may_alias(a))),
            Key::Bconv { .. } => false,
        }
    }
}

fn key(ins: &Instr) -> Option<Key> {
    match ins {
        Instr::Vec(v) => {
            if v.dst.reg().is_none() {
                return None;
            }
            let mut srcs = v.srcs.clone();
            let commutative = !v.flags.cross && v.imm().is_none();
            // Immediates are excluded above, so a register or address orders it.
            let rank = |s: &Src| match s {
                Src::Reg(r) => (Some(*r), None),
                Src::Mem(a) => (None, Some(*a)),
                Src::Imm(_) => (None, None),
            };
            match v.op {
                VecOp::Mmul | VecOp::Mmad if commutative => srcs.sort_by_key(rank),
                VecOp::Mac if commutative => srcs[1..].sort_by_key(rank),
                _ => {}
            }
            Some(Key::Vec {
                op: v.op,
                srcs,
                modulus: v.modulus,
                flags: v.flags,
                step: v.step,
            })
        }
        Instr::Bconv(b) => Some(Key::Bconv {
            srcs: b.srcs.clone(),
            targets: b.targets.clone(),
        }),
        Instr::Scalar(_) => None,
    }
}

/// Returns the number of instructions removed.
pub fn eliminate_redundancy(p: &mut Program) -> usize {
    assert!(!p.form.is_physical(), "redundancy elimination runs on SSA programs");
    let mut table: HashMap<Key, Vec<Reg>> = HashMap::new();
    let mut alias: HashMap<Reg, Reg> = HashMap::new();
    let before = p.instrs.len();
    let mut out = Vec::with_capacity(before);
    for mut ins in std::mem::take(&mut p.instrs) {
        ins.rewrite_uses(|r| alias.get(&r).copied().unwrap_or(r));
        if let Some(a) = ins.mem_write() {
            table.retain(|k, _| !k.reads(&a));
        }
        if let Some(k) = key(&ins) {
            if let Some(prev) = table.get(&k) {
                for (d, e) in ins.defs().into_iter().zip(prev) {
                    alias.insert(d, *e);
                }
                continue;
            }
            table.insert(k, ins.defs());
        }
        out.push(ins);
    }
    p.instrs = out;
    before - p.instrs.len()
}
