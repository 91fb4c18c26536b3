//! Instructions and programs.
//!
//! One representation covers every stage of the pipeline. A program starts as
//! SSA over virtual registers (`%v`), possibly containing the high-level
//! `bconv` op, and ends as machine code over physical SRAM slots (`$k`),
//! streaming FIFO links (`~f`) and direct DRAM operands (`@sym+off`). The
//! [`Form`] tag records how far it has travelled.
//!
//! Every vector value lives modulo one prime, named by the instruction's
//! modulus index. Immediates are plain residues tagged with the Montgomery
//! form they are encoded in when the instruction runs.

use std::collections::HashMap;
use std::fmt;

use effact_core::MontgomeryForm;

/// Pipeline stage of a program. Stages only move forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Form {
    /// Parsed SSA, may contain `bconv`.
    Ir,
    /// ISA-level SSA.
    Lowered,
    /// ISA-level SSA in issue order.
    Scheduled,
    /// Physical slots, streaming operands resolved.
    Allocated,
    /// Hand-written or assembled machine code; may use the scalar subset.
    Machine,
}

impl Form {
    pub fn as_str(self) -> &'static str {
        match self {
            Form::Ir => "ir",
            Form::Lowered => "lowered",
            Form::Scheduled => "scheduled",
            Form::Allocated => "allocated",
            Form::Machine => "machine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ir" => Form::Ir,
            "lowered" => Form::Lowered,
            "scheduled" => Form::Scheduled,
            "allocated" => Form::Allocated,
            "machine" => Form::Machine,
            _ => return None,
        })
    }

    /// Physical forms may not mention virtual registers.
    pub fn is_physical(self) -> bool {
        self >= Form::Allocated
    }
}

/// A vector register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reg {
    Virt(u32),
    Slot(u32),
    Fifo(u32),
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::Virt(v) => write!(f, "%{v}"),
            Reg::Slot(s) => write!(f, "${s}"),
            Reg::Fifo(q) => write!(f, "~{q}"),
        }
    }
}

/// DRAM address in residue polynomials: `sym + offset + s[index]·stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Addr {
    pub sym: u32,
    pub offset: u32,
    pub index: Option<(u8, u32)>,
}

impl Addr {
    pub fn new(sym: u32, offset: u32) -> Self {
        Addr {
            sym,
            offset,
            index: None,
        }
    }

    /// Two addresses may name the same polynomial. Indexed addresses alias
    /// everything in their symbol.
    pub fn may_alias(&self, other: &Addr) -> bool {
        if self.sym != other.sym {
            return false;
        }
        if self.index.is_some() || other.index.is_some() {
            return true;
        }
        self.offset == other.offset
    }
}

/// A word immediate: a plain residue and the form it is encoded in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Imm {
    pub value: u64,
    pub form: MontgomeryForm,
}

impl Imm {
    pub fn new(value: u64, form: MontgomeryForm) -> Self {
        Imm { value, form }
    }
}

impl fmt::Display for Imm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.form.as_str().to_ascii_lowercase(), self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Src {
    Reg(Reg),
    /// Streaming read straight from DRAM (or the address of a `load`).
    Mem(Addr),
    Imm(Imm),
}

impl Src {
    pub fn reg(&self) -> Option<Reg> {
        match self {
            Src::Reg(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dst {
    Reg(Reg),
    /// Streaming write straight to DRAM (or the address of a `store`).
    Mem(Addr),
}

impl Dst {
    pub fn reg(&self) -> Option<Reg> {
        match self {
            Dst::Reg(r) => Some(*r),
            Dst::Mem(_) => None,
        }
    }
}

/// Vector opcodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VecOp {
    Mmul,
    Mmad,
    /// `acc + a·b`, executable on multiplier/adder pairs or an NTT unit.
    Mac,
    Ntt,
    Intt,
    Auto,
    Load,
    Store,
    Copy,
}

impl VecOp {
    pub const ALL: [VecOp; 9] = [
        VecOp::Mmul,
        VecOp::Mmad,
        VecOp::Mac,
        VecOp::Ntt,
        VecOp::Intt,
        VecOp::Auto,
        VecOp::Load,
        VecOp::Store,
        VecOp::Copy,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            VecOp::Mmul => "mmul",
            VecOp::Mmad => "mmad",
            VecOp::Mac => "mac",
            VecOp::Ntt => "ntt",
            VecOp::Intt => "intt",
            VecOp::Auto => "auto",
            VecOp::Load => "load",
            VecOp::Store => "store",
            VecOp::Copy => "copy",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        VecOp::ALL.into_iter().find(|o| o.mnemonic() == s)
    }

    /// Number of source operands.
    pub fn arity(self) -> usize {
        match self {
            VecOp::Mmul | VecOp::Mmad => 2,
            VecOp::Mac => 3,
            _ => 1,
        }
    }

    /// Whether the last source may be an immediate.
    pub fn takes_imm(self) -> bool {
        matches!(self, VecOp::Mmul | VecOp::Mmad | VecOp::Mac)
    }
}

/// Instruction modifiers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Flags {
    /// `intt`: leave out the final `1/n` multiplication.
    pub defer: bool,
    /// `mmul`: consume a scale-deferred operand; the immediate carries `1/n`.
    pub absorb: bool,
    /// `mmul`/`mac`: the first multiplicand lives modulo another prime and is
    /// reduced on read.
    pub cross: bool,
    /// Emitted by base-conversion lowering.
    pub bconv: bool,
}

impl Flags {
    pub fn suffix(&self) -> String {
        let mut s = String::new();
        for (on, name) in [
            (self.defer, ".defer"),
            (self.absorb, ".absorb"),
            (self.cross, ".x"),
            (self.bconv, ".bc"),
        ] {
            if on {
                s.push_str(name);
            }
        }
        s
    }

    pub fn bits(&self) -> u8 {
        self.defer as u8 | (self.absorb as u8) << 1 | (self.cross as u8) << 2 | (self.bconv as u8) << 3
    }

    pub fn from_bits(b: u8) -> Self {
        Flags {
            defer: b & 1 != 0,
            absorb: b & 2 != 0,
            cross: b & 4 != 0,
            bconv: b & 8 != 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VecInstr {
    pub op: VecOp,
    pub dst: Dst,
    pub srcs: Vec<Src>,
    pub modulus: u16,
    pub flags: Flags,
    /// Rotation step of `auto`; zero elsewhere.
    pub step: i64,
}

impl VecInstr {
    pub fn new(op: VecOp, dst: Dst, srcs: Vec<Src>, modulus: u16) -> Self {
        VecInstr {
            op,
            dst,
            srcs,
            modulus,
            flags: Flags::default(),
            step: 0,
        }
    }

    pub fn imm(&self) -> Option<Imm> {
        match self.srcs.last() {
            Some(Src::Imm(i)) => Some(*i),
            _ => None,
        }
    }
}

/// Fast base conversion of coefficient-domain NM limbs, IR only. Sources
/// carry their own moduli; `targets[i]` is the modulus of `dsts[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BconvInstr {
    pub dsts: Vec<Reg>,
    pub srcs: Vec<Reg>,
    pub targets: Vec<u16>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarSrc {
    Reg(u8),
    Imm(i64),
}

/// The scalar subset: sixteen integer registers, counted loops and address
/// arithmetic. Branch targets are instruction indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarInstr {
    Li { dst: u8, imm: i64 },
    Add { dst: u8, a: u8, b: ScalarSrc },
    Mul { dst: u8, a: u8, b: ScalarSrc },
    /// Branch to `target` when `s[a] < b`.
    Blt { a: u8, b: ScalarSrc, target: usize },
    Jmp { target: usize },
}

pub const SCALAR_REGS: usize = 16;

impl ScalarInstr {
    /// Executes the instruction at `pc` on the scalar registers and returns
    /// the next program counter.
    pub fn step(&self, s: &mut [i64; SCALAR_REGS], pc: usize) -> usize {
        let val = |s: &[i64; SCALAR_REGS], x: ScalarSrc| match x {
            ScalarSrc::Reg(r) => s[r as usize],
            ScalarSrc::Imm(i) => i,
        };
        match *self {
            ScalarInstr::Li { dst, imm } => s[dst as usize] = imm,
            ScalarInstr::Add { dst, a, b } => s[dst as usize] = s[a as usize].wrapping_add(val(s, b)),
            ScalarInstr::Mul { dst, a, b } => s[dst as usize] = s[a as usize].wrapping_mul(val(s, b)),
            ScalarInstr::Blt { a, b, target } => {
                if s[a as usize] < val(s, b) {
                    return target;
                }
            }
            ScalarInstr::Jmp { target } => return target,
        }
        pc + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    Vec(VecInstr),
    Bconv(BconvInstr),
    Scalar(ScalarInstr),
}

impl Instr {
    pub fn as_vec(&self) -> Option<&VecInstr> {
        match self {
            Instr::Vec(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_vec_mut(&mut self) -> Option<&mut VecInstr> {
        match self {
            Instr::Vec(v) => Some(v),
            _ => None,
        }
    }

    /// Registers read.
    pub fn uses(&self) -> Vec<Reg> {
        match self {
            Instr::Vec(v) => v.srcs.iter().filter_map(Src::reg).collect(),
            Instr::Bconv(b) => b.srcs.clone(),
            Instr::Scalar(_) => Vec::new(),
        }
    }

    /// Registers written.
    pub fn defs(&self) -> Vec<Reg> {
        match self {
            Instr::Vec(v) => v.dst.reg().into_iter().collect(),
            Instr::Bconv(b) => b.dsts.clone(),
            Instr::Scalar(_) => Vec::new(),
        }
    }

    /// DRAM addresses read.
    pub fn mem_reads(&self) -> Vec<Addr> {
        match self {
            Instr::Vec(v) => v
                .srcs
                .iter()
                .filter_map(|s| match s {
                    Src::Mem(a) => Some(*a),
                    _ => None,
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// DRAM address written.
    pub fn mem_write(&self) -> Option<Addr> {
        match self {
            Instr::Vec(VecInstr { dst: Dst::Mem(a), .. }) => Some(*a),
            _ => None,
        }
    }

    pub fn rewrite_uses(&mut self, mut f: impl FnMut(Reg) -> Reg) {
        match self {
            Instr::Vec(v) => {
                for s in v.srcs.iter_mut() {
                    if let Src::Reg(r) = s {
                        *r = f(*r);
                    }
                }
            }
            Instr::Bconv(b) => {
                for r in b.srcs.iter_mut() {
                    *r = f(*r);
                }
            }
            Instr::Scalar(_) => {}
        }
    }

    pub fn rewrite_defs(&mut self, mut f: impl FnMut(Reg) -> Reg) {
        match self {
            Instr::Vec(v) => {
                if let Dst::Reg(r) = &mut v.dst {
                    *r = f(*r);
                }
            }
            Instr::Bconv(b) => {
                for r in b.dsts.iter_mut() {
                    *r = f(*r);
                }
            }
            Instr::Scalar(_) => {}
        }
    }

    /// Stores and streaming writes must survive dead-code elimination.
    pub fn has_side_effect(&self) -> bool {
        matches!(self, Instr::Scalar(_)) || self.mem_write().is_some()
    }
}

/// A named DRAM region of `size` residue polynomials.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub name: String,
    pub size: u32,
}

/// Name of the region the allocator spills into.
pub const SPILL_SYMBOL: &str = "__spill";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub form: Form,
    pub n: usize,
    /// Modulus values; instructions name them by index.
    pub moduli: Vec<u64>,
    pub symbols: Vec<Symbol>,
    pub instrs: Vec<Instr>,
}

impl Program {
    pub fn new(n: usize, moduli: Vec<u64>) -> Self {
        Program {
            form: Form::Ir,
            n,
            moduli,
            symbols: Vec::new(),
            instrs: Vec::new(),
        }
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.iter().position(|s| s.name == name).map(|i| i as u32)
    }

    /// Adds a symbol, or grows an existing one to at least `size`.
    pub fn ensure_symbol(&mut self, name: &str, size: u32) -> u32 {
        match self.symbol(name) {
            Some(i) => {
                let s = &mut self.symbols[i as usize];
                s.size = s.size.max(size);
                i
            }
            None => {
                self.symbols.push(Symbol {
                    name: name.to_string(),
                    size,
                });
                (self.symbols.len() - 1) as u32
            }
        }
    }

    pub fn vec_instrs(&self) -> impl Iterator<Item = &VecInstr> {
        self.instrs.iter().filter_map(Instr::as_vec)
    }

    /// Largest virtual register number plus one.
    pub fn next_vreg(&self) -> u32 {
        let mut m = 0;
        for i in &self.instrs {
            for r in i.defs().into_iter().chain(i.uses()) {
                if let Reg::Virt(v) = r {
                    m = m.max(v + 1);
                }
            }
        }
        m
    }

    /// Modulus of every register defined in the program.
    pub fn reg_moduli(&self) -> HashMap<Reg, u16> {
        let mut out = HashMap::new();
        for i in &self.instrs {
            match i {
                Instr::Vec(v) => {
                    if let Dst::Reg(r) = v.dst {
                        out.insert(r, v.modulus);
                    }
                }
                Instr::Bconv(b) => {
                    for (r, &m) in b.dsts.iter().zip(&b.targets) {
                        out.insert(*r, m);
                    }
                }
                Instr::Scalar(_) => {}
            }
        }
        out
    }

    /// For every register, the indices of the instructions reading it. Only
    /// meaningful in SSA forms.
    pub fn users(&self) -> HashMap<Reg, Vec<usize>> {
        let mut out: HashMap<Reg, Vec<usize>> = HashMap::new();
        for (k, i) in self.instrs.iter().enumerate() {
            for r in i.uses() {
                out.entry(r).or_default().push(k);
            }
        }
        out
    }

    pub fn opcode_counts(&self) -> HashMap<VecOp, usize> {
        let mut out = HashMap::new();
        for v in self.vec_instrs() {
            *out.entry(v.op).or_insert(0) += 1;
        }
        out
    }
}

/// Removes instructions whose results are never read and which have no
/// side effects, to a fixpoint. Only valid in SSA forms.
pub fn dead_code_elim(p: &mut Program) -> usize {
    let before = p.instrs.len();
    loop {
        let users = p.users();
        let len = p.instrs.len();
        p.instrs.retain(|i| {
            if i.has_side_effect() {
                return true;
            }
            let defs = i.defs();
            defs.is_empty() || defs.iter().any(|r| users.contains_key(r))
        });
        if p.instrs.len() == len {
            break;
        }
    }
    before - p.instrs.len()
}
