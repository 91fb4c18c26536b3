//! `.ebin` machine-code container.
//!
//! Instructions are fixed 128-bit little-endian words. Operands that do not
//! fit an operand field (immediates, DRAM addresses, wide integers) live in
//! pools referenced by index. See `docs/formats.md` for the byte layout.
//!
//! ```text
//! bits      field
//!   0..8    opcode
//!   8..16   flags
//!  16..28   modulus index
//!  28..48   dst
//!  48..68   src0
//!  68..88   src1
//!  88..108  src2
//! 108..128  aux (rotation step, branch target)
//! ```
//!
//! An operand field is a 3-bit kind followed by a 17-bit index.

use std::collections::HashMap;

use effact_core::MontgomeryForm;
use thiserror::Error;

use crate::ir::{
    Addr, Dst, Flags, Form, Imm, Instr, Program, Reg, ScalarInstr, ScalarSrc, Src, Symbol, VecInstr, VecOp,
};

pub const BIN_MAGIC: [u8; 8] = *b"EFCTBIN1";
pub const WORD_BYTES: usize = 16;
const INDEX_BITS: u32 = 17;
const INDEX_MAX: u32 = (1 << INDEX_BITS) - 1;

const OP_LI: u8 = 0x20;
const OP_SADD: u8 = 0x21;
const OP_SMUL: u8 = 0x22;
const OP_BLT: u8 = 0x23;
const OP_JMP: u8 = 0x24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BinaryError {
    #[error("instruction {0}: virtual register {1} is not allocated")]
    VirtualRegister(usize, Reg),
    #[error("instruction {0}: bconv must be lowered before assembly")]
    Bconv(usize),
    #[error("only allocated or machine programs can be assembled, found `{0}`")]
    Form(&'static str),
    #[error("{0} pool exceeds {INDEX_MAX} entries")]
    PoolOverflow(&'static str),
    #[error("operand index {0} exceeds the 17-bit field")]
    FieldOverflow(u64),
    #[error("malformed binary: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
enum Kind {
    None = 0,
    Slot = 1,
    Fifo = 2,
    Mem = 3,
    Imm = 4,
    SReg = 5,
    Lit = 6,
    Int = 7,
}

#[derive(Default)]
struct Pools {
    imms: Vec<Imm>,
    imm_idx: HashMap<Imm, u32>,
    addrs: Vec<Addr>,
    addr_idx: HashMap<Addr, u32>,
    ints: Vec<i64>,
    int_idx: HashMap<i64, u32>,
}

fn intern<T: Copy + Eq + std::hash::Hash>(
    v: T,
    list: &mut Vec<T>,
    idx: &mut HashMap<T, u32>,
    name: &'static str,
) -> Result<u32, BinaryError> {
    if let Some(&i) = idx.get(&v) {
        return Ok(i);
    }
    let i = list.len() as u32;
    if i > INDEX_MAX {
        return Err(BinaryError::PoolOverflow(name));
    }
    list.push(v);
    idx.insert(v, i);
    Ok(i)
}

fn field(kind: Kind, index: u32) -> Result<u32, BinaryError> {
    if index > INDEX_MAX {
        return Err(BinaryError::FieldOverflow(index as u64));
    }
    Ok((kind as u32) << INDEX_BITS | index)
}

impl Pools {
    fn reg(&self, pc: usize, r: Reg) -> Result<u32, BinaryError> {
        match r {
            Reg::Slot(s) => field(Kind::Slot, s),
            Reg::Fifo(f) => field(Kind::Fifo, f),
            Reg::Virt(_) => Err(BinaryError::VirtualRegister(pc, r)),
        }
    }

    fn src(&mut self, pc: usize, s: &Src) -> Result<u32, BinaryError> {
        match s {
            Src::Reg(r) => self.reg(pc, *r),
            Src::Mem(a) => field(Kind::Mem, intern(*a, &mut self.addrs, &mut self.addr_idx, "address")?),
            Src::Imm(i) => field(Kind::Imm, intern(*i, &mut self.imms, &mut self.imm_idx, "constant")?),
        }
    }

    fn dst(&mut self, pc: usize, d: &Dst) -> Result<u32, BinaryError> {
        match d {
            Dst::Reg(r) => self.reg(pc, *r),
            Dst::Mem(a) => self.src(pc, &Src::Mem(*a)),
        }
    }

    fn int(&mut self, v: i64) -> Result<u32, BinaryError> {
        if (0..=INDEX_MAX as i64).contains(&v) {
            field(Kind::Lit, v as u32)
        } else {
            field(Kind::Int, intern(v, &mut self.ints, &mut self.int_idx, "integer")?)
        }
    }

    fn scalar_src(&mut self, s: ScalarSrc) -> Result<u32, BinaryError> {
        match s {
            ScalarSrc::Reg(r) => field(Kind::SReg, r as u32),
            ScalarSrc::Imm(i) => self.int(i),
        }
    }
}

fn pack(op: u8, flags: u8, modulus: u16, fields: [u32; 5]) -> u128 {
    let mut w = op as u128 | (flags as u128) << 8 | ((modulus as u128) & 0xfff) << 16;
    for (k, f) in fields.iter().enumerate() {
        w |= (*f as u128) << (28 + 20 * k);
    }
    w
}

fn encode(pools: &mut Pools, pc: usize, ins: &Instr) -> Result<u128, BinaryError> {
    let sreg = |r: u8| field(Kind::SReg, r as u32);
    match ins {
        Instr::Bconv(_) => Err(BinaryError::Bconv(pc)),
        Instr::Vec(v) => {
            let mut f = [0u32; 5];
            f[0] = pools.dst(pc, &v.dst)?;
            for (k, s) in v.srcs.iter().enumerate().take(3) {
                f[1 + k] = pools.src(pc, s)?;
            }
            if v.op == VecOp::Auto {
                f[4] = pools.int(v.step)?;
            }
            if v.modulus > 0xfff {
                return Err(BinaryError::FieldOverflow(v.modulus as u64));
            }
            let opcode = VecOp::ALL.iter().position(|o| *o == v.op).expect("listed") as u8 + 1;
            Ok(pack(opcode, v.flags.bits(), v.modulus, f))
        }
        Instr::Scalar(s) => Ok(match *s {
            ScalarInstr::Li { dst, imm } => pack(OP_LI, 0, 0, [sreg(dst)?, pools.int(imm)?, 0, 0, 0]),
            ScalarInstr::Add { dst, a, b } => {
                pack(OP_SADD, 0, 0, [sreg(dst)?, sreg(a)?, pools.scalar_src(b)?, 0, 0])
            }
            ScalarInstr::Mul { dst, a, b } => {
                pack(OP_SMUL, 0, 0, [sreg(dst)?, sreg(a)?, pools.scalar_src(b)?, 0, 0])
            }
            ScalarInstr::Blt { a, b, target } => {
                pack(OP_BLT, 0, 0, [0, sreg(a)?, pools.scalar_src(b)?, 0, pools.int(target as i64)?])
            }
            ScalarInstr::Jmp { target } => pack(OP_JMP, 0, 0, [0, 0, 0, 0, pools.int(target as i64)?]),
        }),
    }
}

pub fn assemble(p: &Program) -> Result<Vec<u8>, BinaryError> {
    if !p.form.is_physical() {
        return Err(BinaryError::Form(p.form.as_str()));
    }
    let mut pools = Pools::default();
    let words = p
        .instrs
        .iter()
        .enumerate()
        .map(|(pc, i)| encode(&mut pools, pc, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    out.extend_from_slice(&BIN_MAGIC);
    for v in [
        p.n as u32,
        (p.form == Form::Machine) as u32,
        p.moduli.len() as u32,
        p.symbols.len() as u32,
        pools.imms.len() as u32,
        pools.addrs.len() as u32,
        pools.ints.len() as u32,
        words.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for q in &p.moduli {
        out.extend_from_slice(&q.to_le_bytes());
    }
    for s in &p.symbols {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&s.size.to_le_bytes());
    }
    for i in &pools.imms {
        out.extend_from_slice(&i.value.to_le_bytes());
        out.push(i.form.exponent() as u8);
    }
    for a in &pools.addrs {
        out.extend_from_slice(&a.sym.to_le_bytes());
        out.extend_from_slice(&a.offset.to_le_bytes());
        let (has, reg, stride) = match a.index {
            Some((r, s)) => (1u8, r, s),
            None => (0, 0, 0),
        };
        out.push(has);
        out.push(reg);
        out.extend_from_slice(&stride.to_le_bytes());
    }
    for v in &pools.ints {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], BinaryError> {
        if self.pos + k > self.b.len() {
            return Err(BinaryError::Format("truncated".into()));
        }
        let s = &self.b[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BinaryError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, BinaryError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, BinaryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, BinaryError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct Decoder {
    imms: Vec<Imm>,
    addrs: Vec<Addr>,
    ints: Vec<i64>,
}

fn bad(msg: impl Into<String>) -> BinaryError {
    BinaryError::Format(msg.into())
}

impl Decoder {
    fn split(f: u32) -> (u32, u32) {
        (f >> INDEX_BITS, f & INDEX_MAX)
    }

    fn pooled<T: Copy>(list: &[T], i: u32, what: &str) -> Result<T, BinaryError> {
        list.get(i as usize)
            .copied()
            .ok_or_else(|| bad(format!("{what} pool index {i} out of range")))
    }

    fn src(&self, f: u32) -> Result<Option<Src>, BinaryError> {
        let (k, i) = Self::split(f);
        Ok(Some(match k {
            x if x == Kind::None as u32 => return Ok(None),
            x if x == Kind::Slot as u32 => Src::Reg(Reg::Slot(i)),
            x if x == Kind::Fifo as u32 => Src::Reg(Reg::Fifo(i)),
            x if x == Kind::Mem as u32 => Src::Mem(Self::pooled(&self.addrs, i, "address")?),
            x if x == Kind::Imm as u32 => Src::Imm(Self::pooled(&self.imms, i, "constant")?),
            _ => return Err(bad(format!("operand kind {k} is not a vector operand"))),
        }))
    }

    fn int(&self, f: u32) -> Result<i64, BinaryError> {
        let (k, i) = Self::split(f);
        match k {
            x if x == Kind::Lit as u32 => Ok(i as i64),
            x if x == Kind::Int as u32 => Self::pooled(&self.ints, i, "integer"),
            _ => Err(bad(format!("operand kind {k} is not an integer"))),
        }
    }

    fn sreg(&self, f: u32) -> Result<u8, BinaryError> {
        let (k, i) = Self::split(f);
        if k != Kind::SReg as u32 || i as usize >= crate::ir::SCALAR_REGS {
            return Err(bad(format!("expected a scalar register, found kind {k} index {i}")));
        }
        Ok(i as u8)
    }

    fn scalar_src(&self, f: u32) -> Result<ScalarSrc, BinaryError> {
        if Self::split(f).0 == Kind::SReg as u32 {
            Ok(ScalarSrc::Reg(self.sreg(f)?))
        } else {
            Ok(ScalarSrc::Imm(self.int(f)?))
        }
    }

    fn decode(&self, w: u128) -> Result<Instr, BinaryError> {
        let op = (w & 0xff) as u8;
        let flags = ((w >> 8) & 0xff) as u8;
        let modulus = ((w >> 16) & 0xfff) as u16;
        let f: Vec<u32> = (0..5).map(|k| ((w >> (28 + 20 * k)) & 0xfffff) as u32).collect();
        let target = |s: &Self| -> Result<usize, BinaryError> {
            usize::try_from(s.int(f[4])?).map_err(|_| bad("negative branch target"))
        };
        Ok(match op {
            OP_LI => Instr::Scalar(ScalarInstr::Li {
                dst: self.sreg(f[0])?,
                imm: self.int(f[1])?,
            }),
            OP_SADD => Instr::Scalar(ScalarInstr::Add {
                dst: self.sreg(f[0])?,
                a: self.sreg(f[1])?,
                b: self.scalar_src(f[2])?,
            }),
            OP_SMUL => Instr::Scalar(ScalarInstr::Mul {
                dst: self.sreg(f[0])?,
                a: self.sreg(f[1])?,
                b: self.scalar_src(f[2])?,
            }),
            OP_BLT => Instr::Scalar(ScalarInstr::Blt {
                a: self.sreg(f[1])?,
                b: self.scalar_src(f[2])?,
                target: target(self)?,
            }),
            OP_JMP => Instr::Scalar(ScalarInstr::Jmp { target: target(self)? }),
            k @ 1..=9 => {
                let vop = VecOp::ALL[k as usize - 1];
                let dst = match self.src(f[0])? {
                    Some(Src::Reg(r)) => Dst::Reg(r),
                    Some(Src::Mem(a)) => Dst::Mem(a),
                    _ => return Err(bad("bad destination operand")),
                };
                let mut srcs = Vec::new();
                for &x in &f[1..4] {
                    if let Some(s) = self.src(x)? {
                        srcs.push(s);
                    }
                }
                let mut v = VecInstr::new(vop, dst, srcs, modulus);
                v.flags = Flags::from_bits(flags);
                if vop == VecOp::Auto {
                    v.step = self.int(f[4])?;
                }
                Instr::Vec(v)
            }
            _ => return Err(bad(format!("unknown opcode {op:#x}"))),
        })
    }
}

pub fn disassemble(b: &[u8]) -> Result<Program, BinaryError> {
    let mut r = Reader { b, pos: 0 };
    if r.take(8)? != BIN_MAGIC {
        return Err(bad("bad magic"));
    }
    let n = r.u32()? as usize;
    let form = if r.u32()? == 1 { Form::Machine } else { Form::Allocated };
    let nm = r.u32()? as usize;
    let ns = r.u32()? as usize;
    let ni = r.u32()? as usize;
    let na = r.u32()? as usize;
    let nint = r.u32()? as usize;
    let nw = r.u32()? as usize;
    let moduli = (0..nm).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let mut p = Program::new(n, moduli);
    p.form = form;
    for _ in 0..ns {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("symbol name is not UTF-8"))?;
        let size = r.u32()?;
        p.symbols.push(Symbol { name, size });
    }
    let mut d = Decoder {
        imms: Vec::with_capacity(ni),
        addrs: Vec::with_capacity(na),
        ints: Vec::with_capacity(nint),
    };
    for _ in 0..ni {
        let value = r.u64()?;
        let e = r.u8()?;
        let form = MontgomeryForm::from_exponent(e as i32).ok_or_else(|| bad(format!("bad form {e}")))?;
        d.imms.push(Imm::new(value, form));
    }
    for _ in 0..na {
        let sym = r.u32()?;
        let offset = r.u32()?;
        let has = r.u8()?;
        let reg = r.u8()?;
        let stride = r.u32()?;
        if sym as usize >= p.symbols.len() {
            return Err(bad(format!("address names symbol {sym}")));
        }
        d.addrs.push(Addr {
            sym,
            offset,
            index: (has == 1).then_some((reg, stride)),
        });
    }
    for _ in 0..nint {
        d.ints.push(r.u64()? as i64);
    }
    for _ in 0..nw {
        let w = u128::from_le_bytes(r.take(WORD_BYTES)?.try_into().expect("16 bytes"));
        p.instrs.push(d.decode(w)?);
    }
    if r.pos != b.len() {
        return Err(bad(format!("{} trailing bytes", b.len() - r.pos)));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_program;

    const ASM: &str = "\
.form machine
.n 8
.modulus q0 17
.modulus q1 97
.sym x 4
.sym y 2
    li s0, 0
    li s1, -300000
top:
    $0 = load @x+0+s0*1, q0
    ~1 = intt.defer $0, q0
    $2 = mmul.absorb ~1, sm:5, q0
    $3 = mac.x.bc $2, $2, dm:7, q1
    @y+1 = auto $3, -3, q1
    store $3, @y+0, q1
    sadd s0, s0, 1
    blt s0, 4, top
";

    #[test]
    fn round_trip_preserves_everything() {
        let p = parse_program(ASM).unwrap();
        let bin = assemble(&p).unwrap();
        let back = disassemble(&bin).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.opcode_counts(), p.opcode_counts());
    }

    #[test]
    fn words_are_sixteen_bytes() {
        let p = parse_program(ASM).unwrap();
        let one = assemble(&p).unwrap();
        let mut q = p.clone();
        q.instrs.push(q.instrs[2].clone());
        assert_eq!(assemble(&q).unwrap().len() - one.len(), WORD_BYTES);
    }

    #[test]
    fn virtual_registers_are_rejected() {
        let mut p = parse_program(".n 8\n.modulus q0 17\n.sym x 1\n%0 = load @x+0, q0\n").unwrap();
        assert_eq!(assemble(&p), Err(BinaryError::Form("ir")));
        p.form = Form::Allocated;
        assert_eq!(assemble(&p), Err(BinaryError::VirtualRegister(0, Reg::Virt(0))));
    }

    #[test]
    fn corrupt_input_is_reported() {
        let bin = assemble(&parse_program(ASM).unwrap()).unwrap();
        assert!(disassemble(&bin[..bin.len() - 1]).is_err());
        let mut bad = bin.clone();
        bad[0] = b'X';
        assert!(disassemble(&bad).is_err());
    }
}
