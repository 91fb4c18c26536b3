//! SRAM slot allocation.
//!
//! Straight-line linear scan over the program order. Each virtual register
//! gets a slot when defined and gives it back after its last read; a
//! destination may take the slot of a source read for the last time by the
//! same instruction. When no slot is free the resident value with the
//! furthest next use is evicted. Evicted values that still have an intact
//! copy in DRAM (they were loaded and the address has not been overwritten,
//! or they were spilled before) are dropped without a store; the rest are
//! stored to the `__spill` region. A later read reloads them.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::ir::{Addr, Dst, Form, Instr, Program, Reg, Src, VecInstr, VecOp, SPILL_SYMBOL};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("at least 2 SRAM slots are needed, found {0}")]
    TooFewSlots(u32),
    #[error("instruction {0} reads {1} values at once but only {2} slots exist")]
    Pressure(usize, usize, u32),
    #[error("instruction {0}: allocation needs straight-line vector code")]
    NotStraightLine(usize),
    #[error("program is already allocated")]
    Form,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct AllocStats {
    pub spill_stores: usize,
    pub reloads: usize,
    pub slots_used: u32,
    pub max_live: usize,
}

/// Largest number of values that must sit in SRAM at once under the given
/// order: a value is resident from its definition to its last read, and a
/// destination can reuse a slot freed by that instruction's last reads.
pub fn max_liveness(p: &Program) -> usize {
    let mut last: HashMap<Reg, usize> = HashMap::new();
    for (k, i) in p.instrs.iter().enumerate() {
        for r in i.uses() {
            if matches!(r, Reg::Virt(_)) {
                last.insert(r, k);
            }
        }
    }
    let mut live: std::collections::HashSet<Reg> = std::collections::HashSet::new();
    let mut peak = 0;
    for (k, i) in p.instrs.iter().enumerate() {
        for r in i.uses() {
            if matches!(r, Reg::Virt(_)) {
                live.insert(r);
            }
        }
        peak = peak.max(live.len());
        for r in i.uses() {
            if last.get(&r) == Some(&k) {
                live.remove(&r);
            }
        }
        for r in i.defs() {
            if matches!(r, Reg::Virt(_)) {
                live.insert(r);
                peak = peak.max(live.len());
                if !last.contains_key(&r) {
                    live.remove(&r);
                }
            }
        }
    }
    peak
}

struct State {
    slots: u32,
    slot_of: HashMap<Reg, u32>,
    holder: Vec<Option<Reg>>,
    /// Remaining read positions of every virtual register.
    next_uses: HashMap<Reg, VecDeque<usize>>,
    /// Intact DRAM copy of a value.
    home: HashMap<Reg, Addr>,
    modulus: HashMap<Reg, u16>,
    spill_sym: u32,
    spill_next: u32,
    out: Vec<Instr>,
    stats: AllocStats,
    live: usize,
}

impl State {
    fn next_use(&self, r: Reg) -> usize {
        self.next_uses.get(&r).and_then(|q| q.front().copied()).unwrap_or(usize::MAX)
    }

    fn take_slot(&mut self, r: Reg, protect: &[Reg]) -> u32 {
        let free = (0..self.slots).find(|&s| self.holder[s as usize].is_none());
        let s = match free {
            Some(s) => s,
            None => {
                let victim = self
                    .holder
                    .iter()
                    .enumerate()
                    .filter_map(|(s, h)| h.map(|v| (s, v)))
                    .filter(|(_, v)| !protect.contains(v))
                    .max_by_key(|&(s, v)| (self.next_use(v), std::cmp::Reverse(s)))
                    .expect("callers leave an unprotected resident");
                self.evict(victim.1, victim.0 as u32);
                victim.0 as u32
            }
        };
        self.holder[s as usize] = Some(r);
        self.slot_of.insert(r, s);
        self.live += 1;
        self.stats.max_live = self.stats.max_live.max(self.live);
        self.stats.slots_used = self.stats.slots_used.max(s + 1);
        s
    }

    fn evict(&mut self, v: Reg, s: u32) {
        if !self.home.contains_key(&v) {
            let a = Addr::new(self.spill_sym, self.spill_next);
            self.spill_next += 1;
            self.out.push(Instr::Vec(VecInstr::new(
                VecOp::Store,
                Dst::Mem(a),
                vec![Src::Reg(Reg::Slot(s))],
                self.modulus[&v],
            )));
            self.stats.spill_stores += 1;
            self.home.insert(v, a);
        }
        self.holder[s as usize] = None;
        self.slot_of.remove(&v);
        self.live -= 1;
    }

    fn release(&mut self, r: Reg) {
        if let Some(s) = self.slot_of.remove(&r) {
            self.holder[s as usize] = None;
            self.live -= 1;
        }
    }

    fn ensure(&mut self, r: Reg, protect: &[Reg]) -> u32 {
        if let Some(&s) = self.slot_of.get(&r) {
            return s;
        }
        let s = self.take_slot(r, protect);
        let a = self.home[&r];
        self.out.push(Instr::Vec(VecInstr::new(
            VecOp::Load,
            Dst::Reg(Reg::Slot(s)),
            vec![Src::Mem(a)],
            self.modulus[&r],
        )));
        self.stats.reloads += 1;
        s
    }
}

pub fn allocate(p: &mut Program, slots: u32) -> Result<AllocStats, AllocError> {
    if slots < 2 {
        return Err(AllocError::TooFewSlots(slots));
    }
    if p.form.is_physical() {
        return Err(AllocError::Form);
    }
    for (k, i) in p.instrs.iter().enumerate() {
        if !matches!(i, Instr::Vec(_)) {
            return Err(AllocError::NotStraightLine(k));
        }
    }
    let mut next_uses: HashMap<Reg, VecDeque<usize>> = HashMap::new();
    for (k, i) in p.instrs.iter().enumerate() {
        for r in i.uses() {
            if matches!(r, Reg::Virt(_)) {
                next_uses.entry(r).or_default().push_back(k);
            }
        }
    }
    let had_spill = p.symbol(SPILL_SYMBOL).is_some();
    let spill_sym = p.ensure_symbol(SPILL_SYMBOL, 0);
    let spill_base = p.symbols[spill_sym as usize].size;
    let mut st = State {
        slots,
        slot_of: HashMap::new(),
        holder: vec![None; slots as usize],
        next_uses,
        home: HashMap::new(),
        modulus: p.reg_moduli(),
        spill_sym,
        spill_next: spill_base,
        out: Vec::with_capacity(p.instrs.len()),
        stats: AllocStats::default(),
        live: 0,
    };
    for (k, ins) in std::mem::take(&mut p.instrs).into_iter().enumerate() {
        let Instr::Vec(mut v) = ins else { unreachable!("checked above") };
        let mut reads: Vec<Reg> = Vec::new();
        for s in &v.srcs {
            if let Src::Reg(r @ Reg::Virt(_)) = s {
                if !reads.contains(r) {
                    reads.push(*r);
                }
            }
        }
        if reads.len() > slots as usize {
            return Err(AllocError::Pressure(k, reads.len(), slots));
        }
        for &r in &reads {
            st.ensure(r, &reads);
        }
        let phys: HashMap<Reg, Reg> = reads.iter().map(|&r| (r, Reg::Slot(st.slot_of[&r]))).collect();
        for s in v.srcs.iter_mut() {
            if let Src::Reg(r) = s {
                if let Some(&ph) = phys.get(r) {
                    *r = ph;
                }
            }
        }
        for &r in &reads {
            let q = st.next_uses.get_mut(&r).expect("read registers have uses");
            while q.front().is_some_and(|&u| u <= k) {
                q.pop_front();
            }
            if q.is_empty() {
                st.release(r);
            }
        }
        if let Some(w) = v.dst.reg().filter(|r| matches!(r, Reg::Virt(_))) {
            let s = st.take_slot(w, &[]);
            v.dst = Dst::Reg(Reg::Slot(s));
            if st.next_use(w) == usize::MAX {
                st.release(w);
            }
        }
        let written = v.dst.reg().is_none().then(|| match v.dst {
            Dst::Mem(a) => a,
            Dst::Reg(_) => unreachable!(),
        });
        let loaded = (v.op == VecOp::Load).then(|| match v.srcs[0] {
            Src::Mem(a) if a.index.is_none() => Some(a),
            _ => None,
        });
        let def = ins_def(&v, &st);
        st.out.push(Instr::Vec(v));
        if let Some(a) = written {
            st.home.retain(|_, h| !h.may_alias(&a));
        }
        if let (Some(Some(a)), Some(d)) = (loaded, def) {
            st.home.insert(d, a);
        }
    }
    p.instrs = st.out;
    let used = st.spill_next - spill_base;
    if used == 0 && !had_spill {
        p.symbols.pop();
    } else {
        p.symbols[spill_sym as usize].size = st.spill_next;
    }
    p.form = Form::Allocated;
    Ok(st.stats)
}

/// Virtual register held in the slot an instruction just wrote.
fn ins_def(v: &VecInstr, st: &State) -> Option<Reg> {
    match v.dst {
        Dst::Reg(Reg::Slot(s)) => st.holder[s as usize],
        _ => None,
    }
}
