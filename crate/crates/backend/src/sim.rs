//! Cycle-approximate performance model.
//!
//! The simulator first expands scalar control flow into a dynamic trace of
//! vector instructions with concrete addresses, then replays the trace
//! through an out-of-order scoreboard:
//!
//! * An instruction may issue once it is within `window` positions of the
//!   oldest unissued one, its operands are ready and a unit of its class is
//!   free. Among several issuable instructions the oldest goes first.
//! * Units are single-issue and stay busy for the instruction's occupancy.
//!   A `mac` that finds every multiplier busy may run on an idle NTT unit.
//! * DRAM is a single channel. Explicit loads and stores and streamed
//!   operands reserve it for `n·8 / bandwidth` cycles per residue
//!   polynomial, and data lands `dram_latency` cycles after it leaves.
//!   Requests competing for the channel in one cycle go through an arbiter:
//!   requests waiting longer than an aging threshold first, then streaming
//!   requests while the FIFO space is nearly full, otherwise round-robin
//!   between SRAM traffic and streaming traffic.
//! * Streamed operands arrive element by element, so a consumer starts as
//!   soon as the first elements are there instead of waiting for the whole
//!   polynomial. The same holds for FIFO links between units.
//! * Slot `s` lives in bank `s mod sram_banks`. Two instructions touching
//!   one bank in the same cycle serialize: the later one waits a cycle.
//!   Two operands of one instruction in one bank delay its start a cycle.
//!
//! Virtual registers have unlimited capacity and no bank.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::compile::{compile, CompileError, PassConfig};
use crate::hw::{HardwareDescription, HwError, Unit};
use crate::ir::{Addr, Dst, Instr, Program, Reg, Src, VecOp, SCALAR_REGS};

pub const DEFAULT_STEP_LIMIT: u64 = 50_000_000;

/// A DRAM request that has waited this many cycles beats the round-robin
/// order.
const AGE_LIMIT: u64 = 1024;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("instruction {0} still contains bconv; lower first")]
    Bconv(usize),
    #[error("instruction {pc}: {reg} does not exist on this hardware ({limit} available)")]
    Resource { pc: usize, reg: Reg, limit: u32 },
    #[error("instruction {pc}: modulus index {modulus} out of range")]
    Modulus { pc: usize, modulus: u16 },
    #[error("instruction {pc}: {reg} read before it was written")]
    Undefined { pc: usize, reg: Reg },
    #[error("instruction {pc}: address {addr} is outside its region")]
    OutOfRange { pc: usize, addr: String },
    #[error("step limit of {0} exceeded")]
    StepLimit(u64),
    #[error("hw: {0}")]
    Hw(#[from] HwError),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub trace: bool,
    pub step_limit: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            trace: false,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnitReport {
    pub unit: &'static str,
    pub count: u32,
    pub instructions: u64,
    pub busy_cycles: u64,
    pub utilization: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DramReport {
    pub load_bytes: u64,
    pub store_bytes: u64,
    pub stream_read_bytes: u64,
    pub stream_write_bytes: u64,
    pub total_bytes: u64,
    pub busy_cycles: u64,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub seq: usize,
    pub pc: usize,
    pub op: String,
    pub unit: &'static str,
    /// Cycle the scoreboard dispatched the instruction.
    pub issue: u64,
    /// First cycle of unit occupancy.
    pub start: u64,
    /// Cycle the unit becomes free again.
    pub end: u64,
    /// Cycle the result (or, for writes to DRAM, the written data) is final.
    pub complete: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub cycles: u64,
    pub vector_instructions: u64,
    pub scalar_instructions: u64,
    pub units: Vec<UnitReport>,
    /// MACs that ran on an NTT unit.
    pub mac_on_ntt: u64,
    pub dram: DramReport,
    pub bank_conflicts: u64,
    /// Most residue polynomials held in FIFO space at once.
    pub peak_fifo: u32,
    /// Dependence-graph bound with unlimited units and DRAM channels.
    pub critical_path: u64,
    /// DRAM bytes divided by bandwidth, rounded up.
    pub dram_bound: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

impl SimReport {
    /// Busy cycles over available cycles across the arithmetic units.
    pub fn fu_utilization(&self) -> f64 {
        let busy: u64 = self.units.iter().map(|u| u.busy_cycles).sum();
        let cap: u64 = self.units.iter().map(|u| u.count as u64).sum::<u64>() * self.cycles;
        if cap == 0 {
            0.0
        } else {
            busy as f64 / cap as f64
        }
    }

    pub fn unit(&self, name: &str) -> Option<&UnitReport> {
        self.units.iter().find(|u| u.unit == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// How an instruction's dependence on an earlier one is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dep {
    /// Value read from SRAM or a virtual register: wait for completion.
    Data,
    /// Value read from a FIFO link: wait for the first element.
    Link,
    /// Register about to be overwritten: wait until the reader has consumed it.
    ReadDone,
    /// Register about to be overwritten: wait for the earlier write.
    Complete,
    /// DRAM address written earlier.
    MemDone,
    /// DRAM address read earlier and now about to be written.
    MemReadDone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Load,
    Store,
    Op,
}

/// Static timing shape of one dynamic instruction.
#[derive(Clone, Debug)]
struct Shape {
    pc: usize,
    kind: Kind,
    unit: Unit,
    is_mac: bool,
    occ: u64,
    /// Cycles between the last input element and the last output element
    /// beyond the streaming pipeline depth.
    tail: u64,
    /// Residue polynomials streamed in from DRAM.
    mem_reads: u64,
    /// Result streamed straight to DRAM.
    sink: bool,
    fifo_out: bool,
    /// SRAM banks touched.
    banks: Vec<u32>,
    /// Extra start cycles from operands sharing a bank.
    bank_delay: u64,
    deps: Vec<(usize, Dep)>,
    op: String,
}

#[derive(Clone, Copy, Debug, Default)]
struct Times {
    issue: u64,
    start: u64,
    end: u64,
    first: u64,
    complete: u64,
    read_end: u64,
    write_done: u64,
    /// Start of the DRAM reservation of a streamed result.
    sink_at: u64,
}

impl Times {
    fn ready(&self, d: Dep) -> u64 {
        match d {
            Dep::Data | Dep::Complete => self.complete,
            Dep::Link => self.first,
            Dep::ReadDone => self.end,
            Dep::MemDone => self.write_done,
            Dep::MemReadDone => self.read_end,
        }
    }

    fn last(&self) -> u64 {
        self.end.max(self.complete).max(self.write_done)
    }
}

/// The DRAM channel as a set of disjoint busy intervals.
#[derive(Default)]
struct Channel {
    busy: BTreeMap<u64, u64>,
    total: u64,
}

impl Channel {
    /// Earliest `t ≥ at` with `[t, t + len)` free.
    fn gap(&self, at: u64, len: u64) -> u64 {
        let mut t = at;
        // An interval starting before `at` may still cover it.
        if let Some((_, &e)) = self.busy.range(..=at).next_back() {
            t = t.max(e);
        }
        for (&s, &e) in self.busy.range(at..) {
            if s >= t + len {
                break;
            }
            t = t.max(e);
        }
        t
    }

    fn reserve(&mut self, at: u64, len: u64) {
        debug_assert_eq!(self.gap(at, len), at, "overlapping DRAM reservation");
        if len > 0 {
            self.busy.insert(at, at + len);
            self.total += len;
        }
    }

    /// End of the busy interval covering `t`, if any.
    fn free_after(&self, t: u64) -> Option<u64> {
        self.busy.range(..=t).next_back().map(|(_, &e)| e).filter(|&e| e > t)
    }

    fn next_start_after(&self, t: u64) -> Option<u64> {
        self.busy.range(t + 1..).next().map(|(&s, _)| s)
    }

    fn prune(&mut self, now: u64) {
        let stale: Vec<u64> = self.busy.iter().take_while(|(_, &e)| e <= now).map(|(&s, _)| s).collect();
        for s in stale {
            self.busy.remove(&s);
        }
    }
}

struct Trace {
    shapes: Vec<Shape>,
    scalar_ops: u64,
    n: usize,
}

fn resolve(p: &Program, a: &Addr, s: &[i64; SCALAR_REGS], pc: usize) -> Result<(u32, u32), SimError> {
    let sym = &p.symbols[a.sym as usize];
    let mut off = a.offset as i64;
    if let Some((r, stride)) = a.index {
        off += s[r as usize] * stride as i64;
    }
    if off < 0 || off >= sym.size as i64 {
        return Err(SimError::OutOfRange {
            pc,
            addr: format!("@{}+{off}", sym.name),
        });
    }
    Ok((a.sym, off as u32))
}

fn check_reg(r: Reg, hw: &HardwareDescription, pc: usize) -> Result<(), SimError> {
    let limit = match r {
        Reg::Slot(s) if s >= hw.sram_slots => hw.sram_slots,
        Reg::Fifo(f) if f >= hw.fifo_depth => hw.fifo_depth,
        _ => return Ok(()),
    };
    Err(SimError::Resource { pc, reg: r, limit })
}

/// Expands control flow and records dependences and timing shapes.
fn build_trace(p: &Program, hw: &HardwareDescription, step_limit: u64) -> Result<Trace, SimError> {
    let n = p.n;
    let pass = hw.pass_cycles(n);
    let mut shapes: Vec<Shape> = Vec::new();
    let mut s = [0i64; SCALAR_REGS];
    let mut scalar_ops = 0u64;
    let mut steps = 0u64;
    let mut last_def: HashMap<Reg, usize> = HashMap::new();
    let mut readers: HashMap<Reg, Vec<usize>> = HashMap::new();
    let mut last_write: HashMap<(u32, u32), usize> = HashMap::new();
    let mut mem_readers: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    let mut pc = 0;
    while pc < p.instrs.len() {
        steps += 1;
        if steps > step_limit {
            return Err(SimError::StepLimit(step_limit));
        }
        let v = match &p.instrs[pc] {
            Instr::Scalar(si) => {
                scalar_ops += 1;
                pc = si.step(&mut s, pc);
                continue;
            }
            Instr::Bconv(_) => return Err(SimError::Bconv(pc)),
            Instr::Vec(v) => v,
        };
        if v.modulus as usize >= p.moduli.len() {
            return Err(SimError::Modulus { pc, modulus: v.modulus });
        }
        let k = shapes.len();
        let mut deps: Vec<(usize, Dep)> = Vec::new();
        let mut banks: Vec<u32> = Vec::new();
        let mut mem_reads = 0;
        for src in &v.srcs {
            match src {
                Src::Reg(r) => {
                    check_reg(*r, hw, pc)?;
                    let Some(&j) = last_def.get(r) else {
                        return Err(SimError::Undefined { pc, reg: *r });
                    };
                    deps.push((j, if matches!(r, Reg::Fifo(_)) { Dep::Link } else { Dep::Data }));
                    readers.entry(*r).or_default().push(k);
                    if let Reg::Slot(x) = r {
                        banks.push(x % hw.sram_banks);
                    }
                }
                Src::Mem(a) => {
                    let at = resolve(p, a, &s, pc)?;
                    if let Some(&j) = last_write.get(&at) {
                        deps.push((j, Dep::MemDone));
                    }
                    mem_readers.entry(at).or_default().push(k);
                    mem_reads += 1;
                }
                Src::Imm(_) => {}
            }
        }
        let mut sink = false;
        match v.dst {
            Dst::Reg(r) => {
                check_reg(r, hw, pc)?;
                for &u in readers.get(&r).map(Vec::as_slice).unwrap_or(&[]) {
                    if u != k {
                        deps.push((u, Dep::ReadDone));
                    }
                }
                if let Some(&j) = last_def.get(&r) {
                    deps.push((j, Dep::Complete));
                }
                readers.remove(&r);
                last_def.insert(r, k);
                if let Reg::Slot(x) = r {
                    banks.push(x % hw.sram_banks);
                }
            }
            Dst::Mem(a) => {
                let at = resolve(p, &a, &s, pc)?;
                if let Some(&j) = last_write.get(&at) {
                    deps.push((j, Dep::MemDone));
                }
                for &u in mem_readers.get(&at).map(Vec::as_slice).unwrap_or(&[]) {
                    if u != k {
                        deps.push((u, Dep::MemReadDone));
                    }
                }
                mem_readers.remove(&at);
                last_write.insert(at, k);
                sink = v.op != VecOp::Store;
            }
        }
        deps.sort_unstable_by_key(|d| (d.0, d.1 as u8));
        deps.dedup();
        let kind = match v.op {
            VecOp::Load => Kind::Load,
            VecOp::Store => Kind::Store,
            _ => Kind::Op,
        };
        let occ = hw.occupancy(v.op, v.flags, n).max(1);
        let tail = match v.op {
            VecOp::Ntt | VecOp::Intt => occ.saturating_sub(pass),
            _ => 0,
        };
        let mut sorted = banks.clone();
        sorted.sort_unstable();
        let bank_delay = sorted.windows(2).filter(|w| w[0] == w[1]).count() as u64;
        sorted.dedup();
        shapes.push(Shape {
            pc,
            kind,
            unit: Unit::of(v.op),
            is_mac: v.op == VecOp::Mac,
            occ,
            tail,
            mem_reads: if kind == Kind::Op { mem_reads } else { 0 },
            sink,
            fifo_out: matches!(v.dst, Dst::Reg(Reg::Fifo(_))),
            banks: sorted,
            bank_delay,
            deps,
            op: format!("{}{}", v.op.mnemonic(), v.flags.suffix()),
        });
        pc += 1;
    }
    Ok(Trace { shapes, scalar_ops, n })
}

/// Fixed per-hardware timing constants.
struct Params {
    transfer: u64,
    latency: u64,
    depth: u64,
    pass: u64,
}

impl Params {
    fn new(hw: &HardwareDescription, n: usize) -> Self {
        Params {
            transfer: hw.dram_transfer_cycles(n),
            latency: hw.dram_latency,
            depth: hw.pipeline_depth,
            pass: hw.pass_cycles(n),
        }
    }
}

/// Timing of an instruction dispatched at `now` whose unit starts at
/// `start`. `reserve_sink(at, len)` returns the start of the DRAM window
/// granted to a streamed result.
fn evaluate(
    sh: &Shape,
    now: u64,
    start: u64,
    times: &[Times],
    c: &Params,
    mut reserve_sink: impl FnMut(u64, u64) -> u64,
) -> Times {
    let mut t = Times {
        issue: now,
        start,
        ..Times::default()
    };
    match sh.kind {
        Kind::Load => {
            t.end = now + c.transfer;
            t.read_end = t.end;
            t.complete = t.end + c.latency;
            t.first = now + c.latency + 1;
        }
        Kind::Store => {
            t.end = now + c.transfer;
            t.write_done = t.end + c.latency;
            t.complete = t.write_done;
            t.first = t.complete;
        }
        Kind::Op => {
            let mut input_last = 0;
            if sh.mem_reads > 0 {
                t.read_end = now + sh.mem_reads * c.transfer;
                input_last = t.read_end + c.latency;
            }
            for &(j, d) in &sh.deps {
                if d == Dep::Link {
                    input_last = input_last.max(times[j].complete);
                }
            }
            t.end = (start + sh.occ).max(if input_last > 0 { input_last + sh.tail + 1 } else { 0 });
            t.first = if sh.tail > 0 {
                t.end - c.pass.min(sh.occ) + c.depth
            } else {
                start + c.depth + 1
            };
            t.complete = t.end + c.depth;
            if sh.sink {
                let at = reserve_sink(t.first.max(t.complete.saturating_sub(c.transfer)), c.transfer);
                t.sink_at = at;
                let out_end = at + c.transfer;
                if out_end > t.complete {
                    t.end = out_end - c.depth.min(out_end - start);
                    t.complete = t.end + c.depth;
                }
                t.write_done = out_end.max(t.complete) + c.latency;
            }
        }
    }
    t
}

fn dep_ready(sh: &Shape, times: &[Times], issued: &[bool]) -> Option<u64> {
    let mut r = 0;
    for &(j, d) in &sh.deps {
        if !issued[j] {
            return None;
        }
        r = r.max(times[j].ready(d));
    }
    Some(r)
}

/// Channel cycles an instruction needs at dispatch.
fn channel_need(sh: &Shape, c: &Params) -> u64 {
    match sh.kind {
        Kind::Load | Kind::Store => c.transfer,
        Kind::Op => sh.mem_reads * c.transfer,
    }
}

/// Start cycle of the unit: streamed operands need their first elements.
fn unit_start(sh: &Shape, now: u64, c: &Params) -> u64 {
    now + sh.bank_delay + if sh.mem_reads > 0 { c.latency } else { 0 }
}

/// Longest dependence chain with unlimited units and DRAM channels.
fn critical_path_of(tr: &Trace, c: &Params) -> u64 {
    let mut times: Vec<Times> = Vec::with_capacity(tr.shapes.len());
    let mut best = 0;
    for sh in &tr.shapes {
        let now = sh.deps.iter().map(|&(j, d)| times[j].ready(d)).max().unwrap_or(0);
        let t = evaluate(sh, now, unit_start(sh, now, c), &times, c, |at, _| at);
        best = best.max(t.last());
        times.push(t);
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Sram,
    Stream,
}

struct Scoreboard {
    /// Busy-until cycle of every unit instance, per class.
    units: HashMap<Unit, Vec<u64>>,
    channel: Channel,
    last_class: Class,
    /// FIFO links produced but not yet drained, and end cycles of FIFO
    /// residencies already bounded.
    open_links: u32,
    fifo_ends: BinaryHeap<Reverse<u64>>,
}

impl Scoreboard {
    fn fifo_occupancy(&mut self, now: u64) -> u32 {
        while self.fifo_ends.peek().is_some_and(|Reverse(e)| *e <= now) {
            self.fifo_ends.pop();
        }
        self.open_links + self.fifo_ends.len() as u32
    }

    /// A unit instance free at `start`, preferring the instruction's own
    /// class; MACs fall back to NTT units when allowed.
    fn pick_unit(&self, sh: &Shape, start: u64, mac_on_ntt: bool) -> Option<(Unit, usize)> {
        if sh.unit == Unit::Move {
            return Some((Unit::Move, 0));
        }
        let free = |u: Unit| self.units[&u].iter().position(|&b| b <= start).map(|i| (u, i));
        free(sh.unit).or_else(|| if sh.is_mac && mac_on_ntt { free(Unit::Ntt) } else { None })
    }
}

pub fn simulate(p: &Program, hw: &HardwareDescription) -> Result<SimReport, SimError> {
    simulate_with(p, hw, &SimOptions::default())
}

pub fn simulate_with(p: &Program, hw: &HardwareDescription, opts: &SimOptions) -> Result<SimReport, SimError> {
    hw.validate()?;
    let tr = build_trace(p, hw, opts.step_limit)?;
    let c = Params::new(hw, tr.n);
    let total = tr.shapes.len();
    let window = hw.window.max(1) as usize;
    let mut sb = Scoreboard {
        units: Unit::ARITH.iter().map(|&u| (u, vec![0u64; hw.units_of(u) as usize])).collect(),
        channel: Channel::default(),
        last_class: Class::Stream,
        open_links: 0,
        fifo_ends: BinaryHeap::new(),
    };
    let mut times = vec![Times::default(); total];
    let mut issued = vec![false; total];
    let mut waiting_since: Vec<Option<u64>> = vec![None; total];
    let mut placed: Vec<(Unit, bool)> = vec![(Unit::Move, false); total];
    let mut bank_conflicts = 0u64;
    let mut fifo_intervals: Vec<(u64, u64)> = Vec::new();
    let mut head = 0;
    let mut now = 0u64;

    while head < total {
        let lim = (head + window).min(total);
        let mut next = u64::MAX;
        let mut banks_now: Vec<u32> = Vec::new();
        let mut dram: Vec<usize> = Vec::new();
        for k in head..lim {
            if issued[k] {
                continue;
            }
            let sh = &tr.shapes[k];
            let Some(ready) = dep_ready(sh, &times, &issued) else { continue };
            if ready > now {
                next = next.min(ready);
                continue;
            }
            let needs_channel = Some(channel_need(sh, &c)).filter(|&l| l > 0);
            if let Some(len) = needs_channel {
                waiting_since[k].get_or_insert(now);
                let g = sb.channel.gap(now, len);
                if g > now {
                    next = next.min(sb.channel.free_after(now).unwrap_or(g));
                    continue;
                }
            }
            let start = unit_start(sh, now, &c);
            if sh.kind == Kind::Op && sb.pick_unit(sh, start, hw.mac_on_ntt).is_none() {
                continue;
            }
            if sh.banks.iter().any(|b| banks_now.contains(b)) {
                bank_conflicts += 1;
                next = next.min(now + 1);
                continue;
            }
            if needs_channel.is_some() {
                dram.push(k);
                continue;
            }
            banks_now.extend(&sh.banks);
            issue(k, now, &tr, &c, hw, &mut sb, &mut times, &mut placed, &mut fifo_intervals);
            issued[k] = true;
        }
        // Streamed results issued above may have claimed the channel.
        dram.retain(|&k| sb.channel.gap(now, channel_need(&tr.shapes[k], &c)) == now);
        if !dram.is_empty() {
            let occupancy = sb.fifo_occupancy(now);
            let k = arbitrate(&dram, &tr, &waiting_since, now, &mut sb, occupancy + 1 >= hw.fifo_depth);
            issue(k, now, &tr, &c, hw, &mut sb, &mut times, &mut placed, &mut fifo_intervals);
            issued[k] = true;
            if dram.len() > 1 {
                next = next.min(now + 1);
            }
        }
        while head < total && issued[head] {
            head += 1;
        }
        if head == total {
            break;
        }
        for busy in sb.units.values() {
            for &b in busy {
                if b > now {
                    next = next.min(b);
                }
            }
        }
        if let Some(e) = sb.channel.free_after(now) {
            next = next.min(e);
        }
        if let Some(s) = sb.channel.next_start_after(now) {
            next = next.min(s);
        }
        now = if next == u64::MAX { now + 1 } else { next };
        sb.channel.prune(now.saturating_sub(1));
    }

    let cycles = times.iter().map(Times::last).max().unwrap_or(0);
    let mut units = Vec::new();
    let mut mac_on_ntt = 0;
    for &u in &Unit::ARITH {
        let mut busy = 0;
        let mut count = 0;
        for (k, &(pu, on_ntt)) in placed.iter().enumerate() {
            if pu == u {
                busy += times[k].end - times[k].start;
                count += 1;
                if on_ntt {
                    mac_on_ntt += 1;
                }
            }
        }
        let cap = hw.units_of(u) as u64 * cycles;
        units.push(UnitReport {
            unit: u.as_str(),
            count: hw.units_of(u),
            instructions: count,
            busy_cycles: busy,
            utilization: if cap == 0 { 0.0 } else { busy as f64 / cap as f64 },
        });
    }
    let poly = HardwareDescription::poly_bytes(tr.n);
    let mut dram = DramReport::default();
    for sh in &tr.shapes {
        match sh.kind {
            Kind::Load => dram.load_bytes += poly,
            Kind::Store => dram.store_bytes += poly,
            Kind::Op => {
                dram.stream_read_bytes += sh.mem_reads * poly;
                if sh.sink {
                    dram.stream_write_bytes += poly;
                }
            }
        }
    }
    dram.total_bytes = dram.load_bytes + dram.store_bytes + dram.stream_read_bytes + dram.stream_write_bytes;
    dram.busy_cycles = sb.channel.total;
    dram.utilization = if cycles == 0 { 0.0 } else { dram.busy_cycles as f64 / cycles as f64 };
    let dram_bound = (dram.total_bytes as f64 / hw.dram_bytes_per_cycle).ceil() as u64;
    let trace = opts.trace.then(|| {
        tr.shapes
            .iter()
            .zip(&times)
            .zip(&placed)
            .enumerate()
            .map(|(seq, ((sh, t), &(u, _)))| TraceEvent {
                seq,
                pc: sh.pc,
                op: sh.op.clone(),
                unit: match sh.kind {
                    Kind::Load | Kind::Store => "dram",
                    Kind::Op => u.as_str(),
                },
                issue: t.issue,
                start: t.start,
                end: t.end,
                complete: t.last(),
            })
            .collect()
    });
    Ok(SimReport {
        cycles,
        vector_instructions: total as u64,
        scalar_instructions: tr.scalar_ops,
        units,
        mac_on_ntt,
        dram,
        bank_conflicts,
        peak_fifo: peak_overlap(&fifo_intervals),
        critical_path: critical_path_of(&tr, &c),
        dram_bound,
        trace,
    })
}

/// Picks the DRAM request to grant among those ready at `now`.
fn arbitrate(
    cands: &[usize],
    tr: &Trace,
    waiting_since: &[Option<u64>],
    now: u64,
    sb: &mut Scoreboard,
    fifo_near_full: bool,
) -> usize {
    let class = |k: usize| match tr.shapes[k].kind {
        Kind::Op => Class::Stream,
        _ => Class::Sram,
    };
    let aged = cands
        .iter()
        .copied()
        .filter(|&k| now - waiting_since[k].unwrap_or(now) >= AGE_LIMIT)
        .min_by_key(|&k| (waiting_since[k], k));
    let preferred = if fifo_near_full {
        Class::Stream
    } else if sb.last_class == Class::Stream {
        Class::Sram
    } else {
        Class::Stream
    };
    let k = aged
        .or_else(|| cands.iter().copied().find(|&k| class(k) == preferred))
        .unwrap_or(cands[0]);
    sb.last_class = class(k);
    k
}

#[allow(clippy::too_many_arguments)]
fn issue(
    k: usize,
    now: u64,
    tr: &Trace,
    c: &Params,
    hw: &HardwareDescription,
    sb: &mut Scoreboard,
    times: &mut [Times],
    placed: &mut [(Unit, bool)],
    fifo: &mut Vec<(u64, u64)>,
) {
    let sh = &tr.shapes[k];
    let start = unit_start(sh, now, c);
    let chosen = if sh.kind == Kind::Op {
        sb.pick_unit(sh, start, hw.mac_on_ntt)
    } else {
        None
    };
    let reads = channel_need(sh, c);
    if reads > 0 {
        debug_assert_eq!(sb.channel.gap(now, reads), now);
        sb.channel.reserve(now, reads);
    }
    let t = {
        let channel = &mut sb.channel;
        evaluate(sh, now, start, times, c, |at, len| {
            let g = channel.gap(at, len);
            channel.reserve(g, len);
            g
        })
    };
    if let Some((u, i)) = chosen {
        if u != Unit::Move {
            sb.units.get_mut(&u).expect("arithmetic unit")[i] = t.end;
        }
        placed[k] = (u, sh.is_mac && u == Unit::Ntt);
    }
    // FIFO residency: links from producer start to consumer end, streamed
    // operands from the channel to the end of the consumer, streamed
    // results until they leave on the channel.
    for &(j, d) in &sh.deps {
        if d == Dep::Link {
            fifo.push((times[j].start, t.end));
            sb.open_links = sb.open_links.saturating_sub(1);
            sb.fifo_ends.push(Reverse(t.end));
        }
    }
    for _ in 0..sh.mem_reads {
        fifo.push((now, t.end));
        sb.fifo_ends.push(Reverse(t.end));
    }
    if sh.sink {
        fifo.push((t.first, t.sink_at + c.transfer));
        sb.fifo_ends.push(Reverse(t.sink_at + c.transfer));
    }
    if sh.fifo_out {
        sb.open_links += 1;
    }
    times[k] = t;
}

fn peak_overlap(iv: &[(u64, u64)]) -> u32 {
    let mut ev: Vec<(u64, i32)> = Vec::with_capacity(iv.len() * 2);
    for &(s, e) in iv {
        if e > s {
            ev.push((s, 1));
            ev.push((e, -1));
        }
    }
    // Ends sort before starts at the same cycle.
    ev.sort_unstable();
    let (mut cur, mut best) = (0i32, 0i32);
    for (_, d) in ev {
        cur += d;
        best = best.max(cur);
    }
    best as u32
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub slots: u32,
    pub spill_stores: usize,
    pub reloads: usize,
    pub report: SimReport,
}

/// Compiles `ir` for every SRAM size and simulates it.
pub fn sweep_sram(
    ir: &Program,
    hw: &HardwareDescription,
    slot_counts: &[u32],
    cfg: &PassConfig,
) -> Result<Vec<SweepPoint>, SimError> {
    slot_counts
        .iter()
        .map(|&slots| {
            let h = hw.with_slots(slots);
            let c = compile(ir, &h, cfg)?;
            let (spill_stores, reloads) = c.stats.alloc.map_or((0, 0), |a| (a.spill_stores, a.reloads));
            Ok(SweepPoint {
                slots,
                spill_stores,
                reloads,
                report: simulate(&c.program, &h)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamingComparison {
    pub with: SimReport,
    pub without: SimReport,
    /// Fraction of DRAM bytes saved by streaming.
    pub dram_saving: f64,
    /// Fraction of cycles saved by streaming.
    pub cycle_saving: f64,
}

/// The same IR compiled and simulated with and without streaming.
pub fn compare_streaming(
    ir: &Program,
    hw: &HardwareDescription,
    cfg: &PassConfig,
) -> Result<(StreamingComparison, Program, Program), SimError> {
    let on = hw.with_streaming(true);
    let off = hw.with_streaming(false);
    let p_on = compile(ir, &on, &PassConfig { streaming: true, ..*cfg })?.program;
    let p_off = compile(ir, &off, &PassConfig { streaming: false, ..*cfg })?.program;
    let with = simulate(&p_on, &on)?;
    let without = simulate(&p_off, &off)?;
    let saving = |a: u64, b: u64| if b == 0 { 0.0 } else { 1.0 - a as f64 / b as f64 };
    Ok((
        StreamingComparison {
            dram_saving: saving(with.dram.total_bytes, without.dram.total_bytes),
            cycle_saving: saving(with.cycles, without.cycles),
            with,
            without,
        },
        p_on,
        p_off,
    ))
}

#[derive(Serialize)]
struct SweepRow {
    slots: u32,
    cycles: u64,
    dram_bytes: u64,
    dram_utilization: f64,
    fu_utilization: f64,
    spill_stores: usize,
    reloads: usize,
}

/// One CSV row per SRAM size.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(SweepRow {
            slots: p.slots,
            cycles: p.report.cycles,
            dram_bytes: p.report.dram.total_bytes,
            dram_utilization: p.report.dram.utilization,
            fu_utilization: p.report.fu_utilization(),
            spill_stores: p.spill_stores,
            reloads: p.reloads,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(events: &[TraceEvent], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for e in events {
        out.serialize(e)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_program;

    const HEADER: &str = ".form lowered\n.n 1024\n.modulus q0 12289\n.sym x 8\n";

    fn prog(body: &str) -> Program {
        parse_program(&format!("{HEADER}{body}")).unwrap()
    }

    #[test]
    fn single_ntt_costs_its_latency_after_the_load() {
        let hw = HardwareDescription::default();
        let r = simulate(&prog("%a = load @x+0, q0\n%b = ntt %a, q0\n"), &hw).unwrap();
        let load = hw.dram_transfer_cycles(1024) + hw.dram_latency;
        let ntt = hw.latency(VecOp::Ntt, Default::default(), 1024);
        assert_eq!(r.cycles, load + ntt);
        assert_eq!(r.critical_path, r.cycles);
    }

    #[test]
    fn one_ntt_unit_serializes_independent_transforms() {
        let mut hw = HardwareDescription::default();
        hw.units.ntt = 1;
        let one = simulate(&prog("%a = load @x+0, q0\n%b = ntt %a, q0\n"), &hw).unwrap();
        let two = simulate(&prog("%a = load @x+0, q0\n%b = ntt %a, q0\n%c = ntt %a, q0\n"), &hw).unwrap();
        let occ = hw.occupancy(VecOp::Ntt, Default::default(), 1024);
        assert_eq!(two.cycles, one.cycles + occ);
        hw.units.ntt = 2;
        let par = simulate(&prog("%a = load @x+0, q0\n%b = ntt %a, q0\n%c = ntt %a, q0\n"), &hw).unwrap();
        assert_eq!(par.cycles, one.cycles);
    }

    #[test]
    fn dram_bytes_count_residues_moved() {
        let hw = HardwareDescription::default();
        let r = simulate(
            &prog("%a = load @x+0, q0\n%b = load @x+1, q0\n%c = mmad %a, %b, q0\nstore %c, @x+2, q0\nstore %a, @x+3, q0\n"),
            &hw,
        )
        .unwrap();
        assert_eq!(r.dram.total_bytes, 4 * 1024 * 8);
        assert_eq!(r.dram.load_bytes, 2 * 1024 * 8);
        assert!(r.cycles >= r.dram_bound);
        assert!(r.cycles >= 4 * hw.dram_transfer_cycles(1024));
    }

    #[test]
    fn streamed_operand_starts_before_the_transfer_ends() {
        let hw = HardwareDescription::default();
        let explicit = simulate(&prog("%a = load @x+0, q0\n%b = mmad %a, %a, q0\nstore %b, @x+1, q0\n"), &hw).unwrap();
        let streamed = simulate(&prog("%b = mmad @x+0, @x+2, q0\nstore %b, @x+1, q0\n"), &hw).unwrap();
        assert_eq!(streamed.dram.stream_read_bytes, 2 * 8192);
        assert!(streamed.peak_fifo >= 2);
        // Both transfers occupy the channel back to back.
        assert!(streamed.cycles >= 3 * hw.dram_transfer_cycles(1024));
        assert!(explicit.cycles >= explicit.critical_path);
    }

    #[test]
    fn mac_spills_over_to_ntt_units() {
        let mut hw = HardwareDescription::default();
        hw.units.mmul = 1;
        let body = "%a = load @x+0, q0\n%b = load @x+1, q0\n%c = mac %a, %b, %a, q0\n%d = mac %b, %a, %b, q0\n\
                    %e = mac %a, %a, %b, q0\n";
        let on = simulate(&prog(body), &hw).unwrap();
        assert!(on.mac_on_ntt > 0);
        hw.mac_on_ntt = false;
        let off = simulate(&prog(body), &hw).unwrap();
        assert_eq!(off.mac_on_ntt, 0);
        assert!(on.cycles < off.cycles);
    }

    #[test]
    fn same_bank_operands_conflict() {
        let mut hw = HardwareDescription::default();
        hw.sram_slots = 16;
        hw.sram_banks = 4;
        let p = parse_program(&format!(
            ".form allocated\n.n 1024\n.modulus q0 12289\n.sym x 8\n$0 = load @x+0, q0\n$4 = load @x+1, q0\n\
             $1 = mmad $0, $4, q0\n$2 = mmad $0, $0, q0\n$3 = mmad $4, $4, q0\n"
        ))
        .unwrap();
        let r = simulate(&p, &hw).unwrap();
        assert!(r.bank_conflicts > 0);
        assert!(r.cycles >= r.critical_path);
    }

    #[test]
    fn resources_must_exist() {
        let hw = HardwareDescription::default().with_slots(4);
        let p = parse_program(".form allocated\n.n 8\n.modulus q0 17\n.sym x 1\n$7 = load @x+0, q0\n").unwrap();
        assert!(matches!(simulate(&p, &hw), Err(SimError::Resource { .. })));
        let mut p =
            parse_program(".form lowered\n.n 8\n.modulus q0 17\n.sym x 1\n%0 = load @x+0, q0\n%1 = mmad %0, %0, q0\n")
                .unwrap();
        p.instrs.remove(0);
        assert!(matches!(simulate(&p, &hw), Err(SimError::Undefined { .. })));
    }

    #[test]
    fn loops_expand_into_the_dynamic_trace() {
        let hw = HardwareDescription::default();
        let p = parse_program(
            ".form machine\n.n 1024\n.modulus q0 12289\n.sym x 4\n.sym y 4\nli s1, 0\nloop:\n\
             $0 = load @x+0+s1*1, q0\n$1 = ntt $0, q0\nstore $1, @y+0+s1*1, q0\nsadd s1, s1, 1\nblt s1, 4, loop\n",
        )
        .unwrap();
        let r = simulate(&p, &hw).unwrap();
        assert_eq!(r.vector_instructions, 12);
        assert_eq!(r.scalar_instructions, 9);
        assert_eq!(r.dram.total_bytes, 8 * 8192);
    }
}
