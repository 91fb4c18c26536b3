//! Alias-aware list scheduling.
//!
//! The dependence graph has register edges (true, anti and output) and
//! memory edges between accesses whose addresses may alias when at least one
//! writes. Addresses compare by symbol and offset; indexed addresses alias
//! their whole symbol.
//!
//! Scheduling simulates issue cycle by cycle against the function-unit counts
//! and a single DRAM channel. Among ready instructions the one with the
//! longest latency path to the end of the program goes first, ties broken by
//! source order. Only instructions within `window` positions of the oldest
//! unscheduled one are candidates, which bounds how far values move and so
//! how much extra register pressure scheduling creates.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::hw::{HardwareDescription, Unit};
use crate::ir::{Form, Instr, Program, Reg, VecInstr, VecOp};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("scheduling needs straight-line code; instruction {0} is a scalar op")]
    Scalar(usize),
    #[error("instruction {0} still contains bconv; lower first")]
    Bconv(usize),
    #[error("cyclic dependence through instruction {0}")]
    Cycle(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScheduleInfo {
    /// Issue cycle of every instruction, in the new order.
    pub issue: Vec<u64>,
    /// Completion cycle of the last instruction.
    pub makespan: u64,
    /// Longest latency path through the dependence graph.
    pub critical_path: u64,
    /// Sum of all latencies.
    pub serial: u64,
}

type Accesses = (Vec<usize>, Vec<usize>);

/// Predecessors of every instruction with the delay each edge imposes.
pub fn dependences(p: &Program, lat: &[u64]) -> Vec<Vec<(usize, u64)>> {
    let mut preds: Vec<Vec<(usize, u64)>> = vec![Vec::new(); p.instrs.len()];
    let mut last_def: HashMap<Reg, usize> = HashMap::new();
    let mut readers: HashMap<Reg, Vec<usize>> = HashMap::new();
    // Earlier accesses as (writers, readers): per plain address, per symbol
    // for indexed addresses, and per symbol for everything.
    let mut exact: HashMap<(u32, u32), Accesses> = HashMap::new();
    let mut indexed: HashMap<u32, Accesses> = HashMap::new();
    let mut by_sym: HashMap<u32, Accesses> = HashMap::new();
    for (k, ins) in p.instrs.iter().enumerate() {
        for r in ins.uses() {
            if let Some(&d) = last_def.get(&r) {
                preds[k].push((d, lat[d]));
            }
            readers.entry(r).or_default().push(k);
        }
        for r in ins.defs() {
            if let Some(&d) = last_def.get(&r) {
                preds[k].push((d, lat[d]));
            }
            for &u in readers.get(&r).map(Vec::as_slice).unwrap_or(&[]) {
                if u != k {
                    preds[k].push((u, 0));
                }
            }
            readers.remove(&r);
            last_def.insert(r, k);
        }
        let accesses = ins
            .mem_reads()
            .into_iter()
            .map(|a| (a, false))
            .chain(ins.mem_write().map(|a| (a, true)));
        for (a, w) in accesses {
            let mut link = |acc: Option<&Accesses>| {
                let Some((writes, reads)) = acc else { return };
                let earlier = if w { reads.iter().chain(writes) } else { [].iter().chain(writes) };
                preds[k].extend(earlier.filter(|&&j| j != k).map(|&j| (j, lat[j])));
            };
            if a.index.is_some() {
                link(by_sym.get(&a.sym));
            } else {
                link(exact.get(&(a.sym, a.offset)));
                link(indexed.get(&a.sym));
            }
            let record = |acc: &mut Accesses| if w { acc.0.push(k) } else { acc.1.push(k) };
            if a.index.is_some() {
                record(indexed.entry(a.sym).or_default());
            } else {
                record(exact.entry((a.sym, a.offset)).or_default());
            }
            record(by_sym.entry(a.sym).or_default());
        }
    }
    for ps in preds.iter_mut() {
        ps.sort_unstable();
        ps.dedup_by_key(|e| e.0);
    }
    preds
}

fn resource(v: &VecInstr) -> Option<Unit> {
    match v.op {
        VecOp::Load | VecOp::Store => None,
        op => Some(Unit::of(op)),
    }
}

/// Issue-to-result latency the scheduler assumes for one instruction.
pub fn latency(v: &VecInstr, hw: &HardwareDescription, n: usize) -> u64 {
    let dram = hw.dram_latency + hw.dram_transfer_cycles(n);
    match v.op {
        VecOp::Load | VecOp::Store => dram,
        op => {
            let streams = v.srcs.iter().filter(|s| matches!(s, crate::ir::Src::Mem(_))).count()
                + matches!(v.dst, crate::ir::Dst::Mem(_)) as usize;
            hw.latency(op, v.flags, n) + if streams > 0 { hw.dram_latency } else { 0 }
        }
    }
}

fn check(p: &Program) -> Result<(), ScheduleError> {
    for (k, i) in p.instrs.iter().enumerate() {
        match i {
            Instr::Scalar(_) => return Err(ScheduleError::Scalar(k)),
            Instr::Bconv(_) => return Err(ScheduleError::Bconv(k)),
            Instr::Vec(_) => {}
        }
    }
    Ok(())
}

fn latencies(p: &Program, hw: &HardwareDescription) -> Vec<u64> {
    p.vec_instrs().map(|v| latency(v, hw, p.n)).collect()
}

/// Longest path to the end of the program from each instruction, its own
/// latency included.
fn tail_lengths(preds: &[Vec<(usize, u64)>], lat: &[u64]) -> Vec<u64> {
    let mut tail = lat.to_vec();
    for k in (0..preds.len()).rev() {
        for &(j, d) in &preds[k] {
            tail[j] = tail[j].max(d + tail[k]).max(lat[j]);
        }
    }
    tail
}

pub fn critical_path(p: &Program, hw: &HardwareDescription) -> Result<u64, ScheduleError> {
    check(p)?;
    let lat = latencies(p, hw);
    let preds = dependences(p, &lat);
    Ok(tail_lengths(&preds, &lat).into_iter().max().unwrap_or(0))
}

pub fn schedule(p: &mut Program, hw: &HardwareDescription) -> Result<ScheduleInfo, ScheduleError> {
    check(p)?;
    let n = p.instrs.len();
    let lat = latencies(p, hw);
    let preds = dependences(p, &lat);
    let tail = tail_lengths(&preds, &lat);
    let mut succs: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    let mut waiting = vec![0usize; n];
    for (k, ps) in preds.iter().enumerate() {
        waiting[k] = ps.len();
        for &(j, d) in ps {
            succs[j].push((k, d));
        }
    }
    let transfer = hw.dram_transfer_cycles(p.n);
    let occupancy: Vec<u64> = p
        .vec_instrs()
        .map(|v| match v.op {
            VecOp::Load | VecOp::Store => transfer,
            op => hw.occupancy(op, v.flags, p.n).max(1),
        })
        .collect();
    let mut busy: HashMap<Unit, Vec<u64>> = Unit::ARITH
        .iter()
        .map(|&u| (u, vec![0u64; hw.units_of(u) as usize]))
        .collect();
    let mut dram_free = 0u64;
    let mut ready_at = vec![0u64; n];
    let mut issue = vec![u64::MAX; n];
    let mut pending: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut avail: BinaryHeap<(u64, Reverse<usize>)> = BinaryHeap::new();
    // Ready but beyond the window, smallest index first.
    let mut held: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
    for k in 0..n {
        if waiting[k] == 0 {
            pending.push(Reverse((0, k)));
        }
    }
    let window = hw.window.max(1) as usize;
    let mut oldest = 0;
    let mut order = Vec::with_capacity(n);
    let mut t = 0u64;
    let mut makespan = 0u64;
    while order.len() < n {
        while let Some(&Reverse((r, k))) = pending.peek() {
            if r > t {
                break;
            }
            pending.pop();
            avail.push((tail[k], Reverse(k)));
        }
        let mut next_free = u64::MAX;
        let mut deferred = Vec::new();
        while let Some((pri, Reverse(k))) = avail.pop() {
            if k >= oldest + window {
                held.push(Reverse(k));
                continue;
            }
            let v = p.instrs[k].as_vec().expect("checked");
            let free = match resource(v) {
                None => {
                    if dram_free <= t {
                        dram_free = t + occupancy[k];
                        true
                    } else {
                        next_free = next_free.min(dram_free);
                        false
                    }
                }
                Some(Unit::Move) => true,
                Some(u) => {
                    let units = busy.get_mut(&u).expect("arith unit");
                    match units.iter_mut().find(|b| **b <= t) {
                        Some(b) => {
                            *b = t + occupancy[k];
                            true
                        }
                        None => {
                            next_free = next_free.min(*units.iter().min().expect("positive count"));
                            false
                        }
                    }
                }
            };
            if !free {
                deferred.push((pri, Reverse(k)));
                continue;
            }
            issue[k] = t;
            order.push(k);
            makespan = makespan.max(t + lat[k]);
            for &(s, d) in &succs[k] {
                ready_at[s] = ready_at[s].max(t + d);
                waiting[s] -= 1;
                if waiting[s] == 0 {
                    pending.push(Reverse((ready_at[s], s)));
                }
            }
            while oldest < n && issue[oldest] != u64::MAX {
                oldest += 1;
            }
            while let Some(&Reverse(h)) = held.peek() {
                if h >= oldest + window {
                    break;
                }
                held.pop();
                avail.push((tail[h], Reverse(h)));
            }
        }
        avail.extend(deferred);
        // Issuing may have readied successors or moved the window; both only
        // happen after progress, so retrying the same cycle terminates.
        let next_ready = pending.peek().map(|Reverse((r, _))| *r).unwrap_or(u64::MAX);
        let mut retry = next_ready <= t;
        while let Some(&Reverse(k)) = held.peek() {
            if k >= oldest + window {
                break;
            }
            held.pop();
            avail.push((tail[k], Reverse(k)));
            retry = true;
        }
        if order.len() == n {
            break;
        }
        if retry {
            continue;
        }
        let next = next_free.min(next_ready);
        if next == u64::MAX {
            let stuck = (0..n).find(|&k| issue[k] == u64::MAX).unwrap_or(0);
            return Err(ScheduleError::Cycle(stuck));
        }
        t = next.max(t + 1);
    }
    let old = std::mem::take(&mut p.instrs);
    let mut slots: Vec<Option<Instr>> = old.into_iter().map(Some).collect();
    p.instrs = order.iter().map(|&k| slots[k].take().expect("each once")).collect();
    p.form = p.form.max(Form::Scheduled);
    Ok(ScheduleInfo {
        issue: order.iter().map(|&k| issue[k]).collect(),
        makespan,
        critical_path: tail.iter().copied().max().unwrap_or(0),
        serial: lat.iter().sum(),
    })
}
