//! Randomized well-formed IR programs for differential testing of passes.
//!
//! The generator tracks the layout of every value (modulus, domain, form)
//! and only emits instructions the kernels accept. It deliberately plants
//! what the optimizations look for: copies and identity constants, repeated
//! expressions, inverse NTTs feeding constant products, single-use products
//! feeding adds, base conversions, cross-modulus reads and single-consumer
//! loads.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use effact_core::rns::{ntt_primes_below, RnsError};
use effact_core::MontgomeryForm;

use super::builder::{imm, mem, Builder};
use crate::ir::{Flags, Instr, Program, Reg, Src, VecOp};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomConfig {
    pub n: usize,
    pub moduli: usize,
    pub modulus_bits: u32,
    pub inputs: usize,
    pub ops: usize,
    pub outputs: usize,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig {
            n: 16,
            moduli: 3,
            modulus_bits: 30,
            inputs: 6,
            ops: 40,
            outputs: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Val {
    reg: Reg,
    m: u16,
    coeff: bool,
    form: MontgomeryForm,
}

const FORMS: [MontgomeryForm; 3] = [MontgomeryForm::Nm, MontgomeryForm::Sm, MontgomeryForm::Dm];

fn exp(f: MontgomeryForm) -> i32 {
    f.exponent()
}

struct Gen {
    b: Builder,
    rng: ChaCha8Rng,
    q: Vec<u64>,
    vals: Vec<Val>,
    input_mod: Vec<u16>,
    input: u32,
    out: u32,
    next_out: usize,
}

impl Gen {
    fn push(&mut self, reg: Reg, m: u16, coeff: bool, form: MontgomeryForm) -> Val {
        let v = Val { reg, m, coeff, form };
        self.vals.push(v);
        v
    }

    fn pick(&mut self, f: impl Fn(&Val) -> bool) -> Option<Val> {
        let c: Vec<Val> = self.vals.iter().copied().filter(|v| f(v)).collect();
        c.choose(&mut self.rng).copied()
    }

    /// A recent value, so that chains form.
    fn recent(&mut self, f: impl Fn(&Val) -> bool) -> Option<Val> {
        let c: Vec<Val> = self.vals.iter().rev().copied().filter(|v| f(v)).take(4).collect();
        c.choose(&mut self.rng).copied()
    }

    fn rand_imm(&mut self, m: u16, form: MontgomeryForm) -> Src {
        let q = self.q[m as usize];
        let x = match self.rng.random_range(0..4) {
            0 => 1,
            _ => self.rng.random_range(0..q),
        };
        imm(x, form)
    }

    fn load(&mut self) -> Val {
        let k = self.rng.random_range(0..self.input_mod.len());
        let m = self.input_mod[k];
        let r = self.b.load(self.input, k, m);
        self.push(r, m, false, MontgomeryForm::Sm)
    }

    fn step(&mut self) {
        let choice = self.rng.random_range(0..19);
        match choice {
            0 => {
                self.load();
            }
            1 | 2 => {
                // Product of two values of one modulus and domain.
                let Some(a) = self.recent(|_| true) else { return };
                let Some(b) = self.pick(|v| {
                    v.m == a.m && v.coeff == a.coeff && (0..=2).contains(&(exp(v.form) + exp(a.form) - 1))
                }) else {
                    return;
                };
                let f = MontgomeryForm::from_exponent(exp(a.form) + exp(b.form) - 1).expect("checked");
                let r = self.b.mul(a.reg, Src::Reg(b.reg), a.m);
                self.push(r, a.m, a.coeff, f);
            }
            3 | 4 => {
                let Some(a) = self.recent(|_| true) else { return };
                let forms: Vec<MontgomeryForm> =
                    FORMS.iter().copied().filter(|f| (0..=2).contains(&(exp(*f) + exp(a.form) - 1))).collect();
                let f = *forms.choose(&mut self.rng).expect("SM always works");
                let c = self.rand_imm(a.m, f);
                let r = self.b.mul(a.reg, c, a.m);
                let out = MontgomeryForm::from_exponent(exp(a.form) + exp(f) - 1).expect("checked");
                self.push(r, a.m, a.coeff, out);
            }
            5 | 6 => {
                let Some(a) = self.recent(|_| true) else { return };
                let Some(b) = self.pick(|v| v.m == a.m && v.coeff == a.coeff && v.form == a.form) else { return };
                let r = self.b.add(a.reg, Src::Reg(b.reg), a.m);
                self.push(r, a.m, a.coeff, a.form);
            }
            7 => {
                // Single-use product feeding an add.
                let Some(acc) = self.recent(|_| true) else { return };
                let Some(x) = self.pick(|v| v.m == acc.m && v.coeff == acc.coeff && v.form == MontgomeryForm::Sm) else {
                    return;
                };
                let c = self.rand_imm(acc.m, acc.form);
                let t = self.b.mul(x.reg, c, acc.m);
                let r = self.b.add(acc.reg, Src::Reg(t), acc.m);
                self.push(r, acc.m, acc.coeff, acc.form);
            }
            8 => {
                let Some(a) = self.recent(|v| v.coeff) else { return };
                let r = self.b.ntt(a.reg, a.m);
                self.push(r, a.m, false, a.form);
            }
            9 | 10 => {
                // Inverse NTT, usually followed by constant products.
                let Some(a) = self.recent(|v| !v.coeff) else { return };
                let r = self.b.intt(a.reg, a.m);
                let v = self.push(r, a.m, true, a.form);
                for _ in 0..self.rng.random_range(0..3) {
                    let f = if v.form == MontgomeryForm::Dm { MontgomeryForm::Nm } else { MontgomeryForm::Sm };
                    let c = self.rand_imm(v.m, f);
                    let r = self.b.mul(v.reg, c, v.m);
                    let out = MontgomeryForm::from_exponent(exp(v.form) + exp(f) - 1).expect("in range");
                    self.push(r, v.m, true, out);
                }
            }
            11 => {
                let Some(a) = self.recent(|v| !v.coeff) else { return };
                let step = self.rng.random_range(1..(self.b.program().n / 2).max(2) as i64);
                let r = self.b.auto(a.reg, step, a.m);
                self.push(r, a.m, false, a.form);
            }
            12 => {
                // Identities and copies for propagation.
                let Some(a) = self.recent(|_| true) else { return };
                let r = match self.rng.random_range(0..3) {
                    0 => self.b.emit(VecOp::Copy, vec![Src::Reg(a.reg)], a.m, Flags::default(), 0),
                    1 => self.b.mul(a.reg, imm(1, MontgomeryForm::Sm), a.m),
                    _ => self.b.add(a.reg, imm(0, a.form), a.m),
                };
                self.push(r, a.m, a.coeff, a.form);
            }
            13 => {
                // Repeat an earlier pure instruction verbatim.
                let prev: Vec<Instr> = self
                    .b
                    .program()
                    .instrs
                    .iter()
                    .filter(|i| matches!(i.as_vec(), Some(v) if !matches!(v.op, VecOp::Load | VecOp::Store) && v.dst.reg().is_some()))
                    .cloned()
                    .collect();
                let Some(Instr::Vec(v)) = prev.choose(&mut self.rng).cloned() else { return };
                let src = v.dst.reg().expect("filtered");
                let Some(orig) = self.vals.iter().copied().find(|x| x.reg == src) else { return };
                let r = self.b.emit(v.op, v.srcs.clone(), v.modulus, v.flags, v.step);
                self.push(r, orig.m, orig.coeff, orig.form);
            }
            14 | 15 => self.bconv(),
            16 => {
                // Cross-modulus read of coefficient NM data.
                let Some(a) = self.pick(|v| v.coeff && v.form == MontgomeryForm::Nm) else { return };
                let m = self.rng.random_range(0..self.q.len() as u16);
                let f = *[MontgomeryForm::Sm, MontgomeryForm::Dm].choose(&mut self.rng).expect("non-empty");
                let c = self.rand_imm(m, f);
                let flags = Flags {
                    cross: true,
                    ..Flags::default()
                };
                let r = self.b.emit(VecOp::Mmul, vec![Src::Reg(a.reg), c], m, flags, 0);
                self.push(r, m, true, MontgomeryForm::from_exponent(exp(f) - 1).expect("in range"));
            }
            17 => {
                // Product with an operand streamed from DRAM.
                let k = self.rng.random_range(0..self.input_mod.len());
                let m = self.input_mod[k];
                let Some(a) = self.recent(|v| v.m == m && !v.coeff) else { return };
                let r = self.b.mul(a.reg, mem(self.input, k), m);
                self.push(r, m, false, a.form);
            }
            _ => {
                let Some(a) = self.pick(|_| true) else { return };
                let off = self.next_out;
                self.next_out += 1;
                self.b.store(a.reg, self.out, off, a.m);
            }
        }
    }

    fn bconv(&mut self) {
        // Bring one or two NTT values of distinct moduli to coefficient NM.
        let count = self.rng.random_range(1..=2.min(self.q.len() - 1));
        let mut srcs: Vec<Val> = Vec::new();
        for _ in 0..count {
            let used: Vec<u16> = srcs.iter().map(|v| v.m).collect();
            let Some(a) = self.pick(|v| !v.coeff && v.form == MontgomeryForm::Sm && !used.contains(&v.m)) else { break };
            let c = self.b.intt(a.reg, a.m);
            let c = self.b.mul(c, imm(1, MontgomeryForm::Nm), a.m);
            srcs.push(Val {
                reg: c,
                m: a.m,
                coeff: true,
                form: MontgomeryForm::Nm,
            });
        }
        if srcs.is_empty() {
            return;
        }
        let mut targets: Vec<u16> = (0..self.q.len() as u16).filter(|m| srcs.iter().all(|s| s.m != *m)).collect();
        let keep = self.rng.random_range(1..=targets.len());
        targets.truncate(keep);
        let dsts = self.b.bconv(srcs.iter().map(|s| s.reg).collect(), targets.clone());
        for (d, t) in dsts.into_iter().zip(targets) {
            let s = self.b.mul(d, imm(1, MontgomeryForm::Dm), t);
            let r = self.b.ntt(s, t);
            self.push(r, t, false, MontgomeryForm::Sm);
        }
    }
}

/// A random IR program reading `@in` and writing `@out`.
pub fn random_program(seed: u64, cfg: &RandomConfig) -> Result<Program, RnsError> {
    let q = ntt_primes_below(cfg.n, cfg.moduli.max(2), cfg.modulus_bits, &[])?;
    let rng = ChaCha8Rng::seed_from_u64(seed);
    let input_mod: Vec<u16> = (0..cfg.inputs.max(1)).map(|k| (k % q.len()) as u16).collect();
    let mut b = Builder::new(cfg.n, q.clone());
    let input = b.sym("in", input_mod.len());
    let out = b.sym("out", 0);
    let mut g = Gen {
        b,
        rng,
        q,
        vals: Vec::new(),
        input_mod,
        input,
        out,
        next_out: 0,
    };
    for _ in 0..2 {
        g.load();
    }
    for _ in 0..cfg.ops {
        g.step();
    }
    for _ in 0..cfg.outputs.max(1) {
        let a = *g.vals.last().expect("loaded values");
        let pick = if g.rng.random_bool(0.5) { a } else { *g.vals.choose(&mut g.rng).expect("non-empty") };
        let off = g.next_out;
        g.next_out += 1;
        g.b.store(pick.reg, g.out, off, pick.m);
    }
    let size = g.next_out;
    g.b.sym("out", size);
    Ok(g.b.finish())
}
