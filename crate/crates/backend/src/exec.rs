//! Golden functional executor.
//!
//! Runs a program of any form on a [`MemoryImage`] using the arithmetic
//! kernels, so every compiler pass can be checked by running its input and
//! output on the same image. Reading a FIFO consumes the value; reading an
//! SRAM slot or virtual register does not.

use std::collections::HashMap;

use effact_core::kernels::{
    automorphism_ntt, bconv_with, lift, mac_fused, mac_fused_scalar, ntt_fwd, ntt_inv, vec_copy, vec_madd,
    vec_madd_scalar, vec_mmul, vec_mmul_scalar, vec_mmul_scalar_absorb, BconvTables,
};
use effact_core::rns::BasisRole;
use effact_core::{KernelError, Modulus, ResiduePoly, RnsBasis, RnsPoly, Scalar};
use thiserror::Error;

use crate::ir::{Addr, BconvInstr, Dst, Instr, Program, Reg, Src, VecInstr, VecOp};
use crate::memory::{MemoryError, MemoryImage};

pub const DEFAULT_STEP_LIMIT: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum ExecErrorKind {
    #[error("register {0} read before it was written")]
    Undefined(Reg),
    #[error("DRAM address {0} read before it was written")]
    Uninitialized(String),
    #[error("address {0} is outside its region")]
    OutOfRange(String),
    #[error("result lives modulo {found}, instruction names {expected}")]
    WrongModulus { expected: u64, found: u64 },
    #[error("modulus index {0} out of range")]
    BadModulus(u16),
    #[error("malformed instruction: {0}")]
    Malformed(String),
    #[error("step limit of {0} exceeded")]
    StepLimit(u64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("instruction {pc}: {kind}")]
    At { pc: usize, kind: ExecErrorKind },
}

#[derive(Clone, Debug)]
pub struct ExecOptions {
    pub step_limit: u64,
    /// Record one line per executed instruction.
    pub trace: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            step_limit: DEFAULT_STEP_LIMIT,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExecReport {
    pub vector_ops: u64,
    pub scalar_ops: u64,
    pub dynamic_counts: HashMap<VecOp, u64>,
    pub trace: Vec<String>,
    /// Register file at exit.
    pub regs: HashMap<Reg, ResiduePoly>,
}

pub fn execute(p: &Program, img: &mut MemoryImage) -> Result<ExecReport, ExecError> {
    execute_with(p, img, &ExecOptions::default())
}

pub fn execute_with(p: &Program, img: &mut MemoryImage, opts: &ExecOptions) -> Result<ExecReport, ExecError> {
    img.bind(p)?;
    let bases: Vec<u64> = p
        .symbols
        .iter()
        .map(|s| img.region(&s.name).expect("bound above").base)
        .collect();
    let mut m = Machine {
        p,
        img,
        bases,
        regs: HashMap::new(),
        s: [0; crate::ir::SCALAR_REGS],
        tables: HashMap::new(),
    };
    let mut report = ExecReport::default();
    let mut pc = 0;
    let mut steps = 0u64;
    while pc < p.instrs.len() {
        steps += 1;
        if steps > opts.step_limit {
            return Err(ExecError::At {
                pc,
                kind: ExecErrorKind::StepLimit(opts.step_limit),
            });
        }
        if opts.trace {
            report
                .trace
                .push(format!("{pc:>6}  {}", crate::text::format_instr(p, &p.instrs[pc])));
        }
        let at = |kind| ExecError::At { pc, kind };
        match &p.instrs[pc] {
            Instr::Vec(v) => {
                m.vec(v).map_err(at)?;
                report.vector_ops += 1;
                *report.dynamic_counts.entry(v.op).or_insert(0) += 1;
                pc += 1;
            }
            Instr::Bconv(b) => {
                m.bconv(b).map_err(at)?;
                report.vector_ops += 1;
                pc += 1;
            }
            Instr::Scalar(s) => {
                report.scalar_ops += 1;
                pc = s.step(&mut m.s, pc);
            }
        }
    }
    report.regs = m.regs;
    Ok(report)
}

struct Machine<'a> {
    p: &'a Program,
    img: &'a mut MemoryImage,
    bases: Vec<u64>,
    regs: HashMap<Reg, ResiduePoly>,
    s: [i64; crate::ir::SCALAR_REGS],
    tables: HashMap<(Vec<u16>, Vec<u16>), BconvTables>,
}

impl Machine<'_> {
    fn modulus(&self, k: u16) -> Result<Modulus, ExecErrorKind> {
        self.img
            .moduli()
            .get(k as usize)
            .cloned()
            .ok_or(ExecErrorKind::BadModulus(k))
    }

    fn resolve(&self, a: &Addr) -> Result<usize, ExecErrorKind> {
        let sym = &self.p.symbols[a.sym as usize];
        let mut off = a.offset as i64;
        if let Some((r, stride)) = a.index {
            off += self.s[r as usize] * stride as i64;
        }
        if off < 0 || off >= sym.size as i64 {
            return Err(ExecErrorKind::OutOfRange(self.describe(a)));
        }
        Ok((self.bases[a.sym as usize] + off as u64) as usize)
    }

    fn describe(&self, a: &Addr) -> String {
        let mut s = format!("@{}+{}", self.p.symbols[a.sym as usize].name, a.offset);
        if let Some((r, stride)) = a.index {
            s.push_str(&format!("+s{r}*{stride} (s{r} = {})", self.s[r as usize]));
        }
        s
    }

    fn read_reg(&mut self, r: Reg) -> Result<ResiduePoly, ExecErrorKind> {
        let v = match r {
            Reg::Fifo(_) => self.regs.remove(&r),
            _ => self.regs.get(&r).cloned(),
        };
        v.ok_or(ExecErrorKind::Undefined(r))
    }

    fn read(&mut self, s: &Src) -> Result<ResiduePoly, ExecErrorKind> {
        match s {
            Src::Reg(r) => self.read_reg(*r),
            Src::Mem(a) => {
                let i = self.resolve(a)?;
                self.img
                    .get_abs(i)
                    .cloned()
                    .ok_or_else(|| ExecErrorKind::Uninitialized(self.describe(a)))
            }
            Src::Imm(_) => Err(ExecErrorKind::Malformed("immediate where a vector is required".into())),
        }
    }

    fn write(&mut self, d: &Dst, v: ResiduePoly) -> Result<(), ExecErrorKind> {
        match d {
            Dst::Reg(r) => {
                self.regs.insert(*r, v);
            }
            Dst::Mem(a) => {
                let i = self.resolve(a)?;
                self.img.set_abs(i, v);
            }
        }
        Ok(())
    }

    fn vec(&mut self, v: &VecInstr) -> Result<(), ExecErrorKind> {
        if v.srcs.len() != v.op.arity() {
            return Err(ExecErrorKind::Malformed(format!(
                "{} takes {} sources, found {}",
                v.op.mnemonic(),
                v.op.arity(),
                v.srcs.len()
            )));
        }
        let m = self.modulus(v.modulus)?;
        let scalar = v.imm().map(|i| Scalar::encode(i.value, i.form, &m));
        // The multiplicand that may cross moduli.
        let cross_at = if v.op == VecOp::Mac { 1 } else { 0 };
        let mut vals = Vec::with_capacity(v.srcs.len());
        for (k, s) in v.srcs.iter().enumerate() {
            if matches!(s, Src::Imm(_)) {
                continue;
            }
            let mut x = self.read(s)?;
            if v.flags.cross && k == cross_at {
                x = lift(&x, &m)?;
            }
            vals.push(x);
        }
        let out = match (v.op, scalar) {
            (VecOp::Mmul, Some(c)) if v.flags.absorb => vec_mmul_scalar_absorb(&vals[0], c)?,
            (VecOp::Mmul, Some(c)) => vec_mmul_scalar(&vals[0], c)?,
            (VecOp::Mmul, None) => vec_mmul(&vals[0], &vals[1])?,
            (VecOp::Mmad, Some(c)) => vec_madd_scalar(&vals[0], c)?,
            (VecOp::Mmad, None) => vec_madd(&vals[0], &vals[1])?,
            (VecOp::Mac, Some(c)) => mac_fused_scalar(&vals[0], &vals[1], c)?,
            (VecOp::Mac, None) => mac_fused(&vals[0], &vals[1], &vals[2])?,
            (VecOp::Ntt, None) => ntt_fwd(&vals[0])?,
            (VecOp::Intt, None) => ntt_inv(&vals[0], v.flags.defer)?,
            (VecOp::Auto, None) => automorphism_ntt(&vals[0], v.step)?,
            (VecOp::Load | VecOp::Store | VecOp::Copy, None) => vec_copy(&vals[0]),
            (op, Some(_)) => {
                return Err(ExecErrorKind::Malformed(format!("{} takes no immediate", op.mnemonic())));
            }
        };
        if out.modulus() != &m {
            return Err(ExecErrorKind::WrongModulus {
                expected: m.value(),
                found: out.modulus().value(),
            });
        }
        self.write(&v.dst, out)
    }

    fn bconv(&mut self, b: &BconvInstr) -> Result<(), ExecErrorKind> {
        let mut limbs = Vec::with_capacity(b.srcs.len());
        let mut src_idx = Vec::with_capacity(b.srcs.len());
        for r in &b.srcs {
            let x = self.read_reg(*r)?;
            let k = self
                .img
                .moduli()
                .iter()
                .position(|m| m == x.modulus())
                .expect("image admits only its own moduli") as u16;
            src_idx.push(k);
            limbs.push(x);
        }
        let key = (src_idx, b.targets.clone());
        if !self.tables.contains_key(&key) {
            let src = RnsBasis::new(limbs.iter().map(|l| l.modulus().clone()).collect(), BasisRole::Ciphertext)
                .map_err(|e| ExecErrorKind::Malformed(e.to_string()))?;
            let dst = RnsBasis::new(
                b.targets.iter().map(|&t| self.modulus(t)).collect::<Result<Vec<_>, _>>()?,
                BasisRole::Extension,
            )
            .map_err(|e| ExecErrorKind::Malformed(e.to_string()))?;
            self.tables.insert(key.clone(), BconvTables::new(&src, &dst)?);
        }
        let tables = &self.tables[&key];
        let input = RnsPoly::new(tables.source().clone(), limbs)?;
        let out = bconv_with(&input, tables)?;
        for (r, l) in b.dsts.iter().zip(out.into_limbs()) {
            self.regs.insert(*r, l);
        }
        Ok(())
    }
}

/// Names of the program's own regions, excluding the spill area.
pub fn program_regions(p: &Program) -> Vec<&str> {
    p.symbols
        .iter()
        .map(|s| s.name.as_str())
        .filter(|n| *n != crate::ir::SPILL_SYMBOL)
        .collect()
}
