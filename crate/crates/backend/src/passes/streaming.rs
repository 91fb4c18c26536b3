//! Streaming instruction merging.
//!
//! * A `load` whose value is read exactly once becomes a streaming source of
//!   its consumer and stops occupying an SRAM slot.
//! * A `store` of a value produced for it alone becomes a streaming sink of
//!   the producer.
//! * A value read once, by the very next instruction, travels through a
//!   FIFO link between the two function units instead of SRAM.
//!
//! Works on straight-line code in SSA or allocated form: "read exactly once"
//! means one read between the definition and the next redefinition of the
//! register. Programs with scalar control flow are left untouched.

use crate::hw::HardwareDescription;
use crate::ir::{Addr, Dst, Instr, Program, Reg, Src, VecOp};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct StreamStats {
    pub loads: usize,
    pub stores: usize,
    pub links: usize,
}

impl StreamStats {
    pub fn add(&mut self, o: StreamStats) {
        self.loads += o.loads;
        self.stores += o.stores;
        self.links += o.links;
    }
}

/// For every instruction, the positions reading the value it defines, or
/// `None` when it defines nothing in a register.
fn reads_of_defs(p: &Program) -> Vec<Option<Vec<usize>>> {
    let mut out: Vec<Option<Vec<usize>>> = vec![None; p.instrs.len()];
    let mut cur: std::collections::HashMap<Reg, usize> = std::collections::HashMap::new();
    for (k, ins) in p.instrs.iter().enumerate() {
        for r in ins.uses() {
            if let Some(&d) = cur.get(&r) {
                out[d].get_or_insert_with(Vec::new).push(k);
            }
        }
        for r in ins.defs() {
            cur.insert(r, k);
            out[k].get_or_insert_with(Vec::new);
        }
    }
    out
}

fn touches(ins: &Instr, a: &Addr, write_only: bool) -> bool {
    ins.mem_write().is_some_and(|w| w.may_alias(a)) || !write_only && ins.mem_reads().iter().any(|r| r.may_alias(a))
}

fn merge_loads(p: &mut Program) -> usize {
    let reads = reads_of_defs(p);
    let mut dead = vec![false; p.instrs.len()];
    let mut count = 0;
    for d in 0..p.instrs.len() {
        let (r, a) = match p.instrs[d].as_vec() {
            Some(v) if v.op == VecOp::Load => match (v.dst, v.srcs[0]) {
                (Dst::Reg(r), Src::Mem(a)) if !matches!(r, Reg::Fifo(_)) => (r, a),
                _ => continue,
            },
            _ => continue,
        };
        let Some([u]) = reads[d].as_deref() else { continue };
        let u = *u;
        let Some(c) = p.instrs[u].as_vec() else { continue };
        if matches!(c.op, VecOp::Load | VecOp::Store) || c.srcs.iter().filter(|s| **s == Src::Reg(r)).count() != 1 {
            continue;
        }
        if p.instrs[d + 1..u].iter().any(|i| touches(i, &a, true)) {
            continue;
        }
        let c = p.instrs[u].as_vec_mut().expect("checked");
        for s in c.srcs.iter_mut() {
            if *s == Src::Reg(r) {
                *s = Src::Mem(a);
            }
        }
        dead[d] = true;
        count += 1;
    }
    sweep(p, &dead);
    count
}

fn merge_stores(p: &mut Program) -> usize {
    let reads = reads_of_defs(p);
    let mut def_of: std::collections::HashMap<Reg, usize> = std::collections::HashMap::new();
    let mut dead = vec![false; p.instrs.len()];
    let mut count = 0;
    for s in 0..p.instrs.len() {
        if let Some(v) = p.instrs[s].as_vec() {
            if let (VecOp::Store, Dst::Mem(a), Src::Reg(r)) = (v.op, v.dst, v.srcs[0]) {
                if let Some(&d) = def_of.get(&r) {
                    let single = reads[d].as_deref() == Some(&[s][..]);
                    let producer_ok = matches!(p.instrs[d].as_vec(), Some(pv) if !matches!(pv.op, VecOp::Load | VecOp::Store) && !dead[d]);
                    let clear = !p.instrs[d + 1..s].iter().any(|i| touches(i, &a, false));
                    if single && producer_ok && clear {
                        p.instrs[d].as_vec_mut().expect("checked").dst = Dst::Mem(a);
                        dead[s] = true;
                        count += 1;
                        continue;
                    }
                }
            }
        }
        for r in p.instrs[s].defs() {
            def_of.insert(r, s);
        }
    }
    sweep(p, &dead);
    count
}

fn merge_links(p: &mut Program, depth: u32, next_fifo: &mut u32) -> usize {
    let reads = reads_of_defs(p);
    let mut count = 0;
    for d in 0..p.instrs.len().saturating_sub(1) {
        let r = match p.instrs[d].as_vec() {
            Some(v) if !matches!(v.op, VecOp::Load | VecOp::Store) => match v.dst {
                Dst::Reg(r) if !matches!(r, Reg::Fifo(_)) => r,
                _ => continue,
            },
            _ => continue,
        };
        if reads[d].as_deref() != Some(&[d + 1][..]) {
            continue;
        }
        let Some(c) = p.instrs[d + 1].as_vec() else { continue };
        if c.op == VecOp::Store || c.srcs.iter().filter(|s| **s == Src::Reg(r)).count() != 1 {
            continue;
        }
        // The consumer must not also redefine the register it reads.
        if c.dst == Dst::Reg(r) {
            continue;
        }
        let f = Reg::Fifo(*next_fifo % depth);
        *next_fifo += 1;
        p.instrs[d].as_vec_mut().expect("checked").dst = Dst::Reg(f);
        for s in p.instrs[d + 1].as_vec_mut().expect("checked").srcs.iter_mut() {
            if *s == Src::Reg(r) {
                *s = Src::Reg(f);
            }
        }
        count += 1;
    }
    count
}

fn sweep(p: &mut Program, dead: &[bool]) {
    let mut k = 0;
    p.instrs.retain(|_| {
        k += 1;
        !dead[k - 1]
    });
}

fn next_fifo_id(p: &Program) -> u32 {
    p.instrs
        .iter()
        .flat_map(|i| i.defs())
        .filter_map(|r| match r {
            Reg::Fifo(f) => Some(f + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

pub fn merge_streaming(p: &mut Program, hw: &HardwareDescription) -> StreamStats {
    if p.instrs.iter().any(|i| !matches!(i, Instr::Vec(_))) {
        return StreamStats::default();
    }
    let mut next = next_fifo_id(p);
    StreamStats {
        loads: merge_loads(p),
        stores: merge_stores(p),
        links: merge_links(p, hw.fifo_depth, &mut next),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_program;

    const HEADER: &str = ".form lowered\n.n 8\n.modulus q0 17\n.sym x 4\n";

    #[test]
    fn single_consumer_load_streams_into_ntt() {
        let mut p = parse_program(&format!(
            "{HEADER}%a = load @x+0, q0\n%b = load @x+1, q0\n%c = ntt %a, q0\n%d = mmad %b, %c, q0\n\
             %e = mmad %d, %b, q0\nstore %e, @x+2, q0\n"
        ))
        .unwrap();
        let s = merge_streaming(&mut p, &HardwareDescription::default());
        assert_eq!(s.loads, 1);
        assert_eq!(s.stores, 1);
        assert_eq!(p.opcode_counts()[&VecOp::Load], 1);
        let ntt = p.vec_instrs().find(|v| v.op == VecOp::Ntt).unwrap();
        assert!(matches!(ntt.srcs[0], Src::Mem(_)));
        // `%b` has two consumers and stays in SRAM.
        assert!(matches!(p.instrs[0].as_vec().unwrap().dst, Dst::Reg(Reg::Virt(_))));
        // ntt → mmad → mmad are adjacent single reads: two FIFO links.
        assert_eq!(s.links, 2);
    }

    #[test]
    fn stores_do_not_jump_aliasing_reads() {
        let mut p = parse_program(&format!(
            "{HEADER}%a = load @x+0, q0\n%b = ntt %a, q0\n%c = load @x+1, q0\n%d = mmad %c, %c, q0\n\
             store %d, @x+3, q0\nstore %b, @x+1, q0\n"
        ))
        .unwrap();
        let s = merge_streaming(&mut p, &HardwareDescription::default());
        // The load of x+1 sits between the ntt and its store.
        assert!(p.instrs.iter().any(|i| matches!(i.as_vec(), Some(v) if v.op == VecOp::Store && v.dst == Dst::Mem(Addr::new(0, 1)))));
        assert_eq!(s.stores, 1);
    }
}
