//! Program construction and ciphertext-level building blocks.
//!
//! Every ciphertext operation here emits the same arithmetic as the
//! corresponding reference routine in `effact_core::ckks`, limb by limb, in
//! the unmerged style: full inverse NTTs, explicit NM/SM conversions around
//! base conversion, and separate multiply and add instructions. The peephole
//! pass is what turns this into the merged form.

use std::ops::Range;

use effact_core::ckks::{CkksError, CkksParams};
use effact_core::rns::{mul_mod, pow_mod};
use effact_core::MontgomeryForm;

use crate::ir::{Addr, BconvInstr, Dst, Flags, Form, Imm, Instr, Program, Reg, Src, VecInstr, VecOp};

pub fn mem(sym: u32, off: usize) -> Src {
    Src::Mem(Addr::new(sym, off as u32))
}

pub fn imm(value: u64, form: MontgomeryForm) -> Src {
    Src::Imm(Imm::new(value, form))
}

const BC: Flags = Flags {
    defer: false,
    absorb: false,
    cross: false,
    bconv: true,
};

/// Appends SSA IR instructions with fresh virtual registers.
#[derive(Clone, Debug)]
pub struct Builder {
    p: Program,
    next: u32,
}

impl Builder {
    pub fn new(n: usize, moduli: Vec<u64>) -> Self {
        let mut p = Program::new(n, moduli);
        p.form = Form::Ir;
        Builder { p, next: 0 }
    }

    pub fn sym(&mut self, name: &str, size: usize) -> u32 {
        self.p.ensure_symbol(name, size as u32)
    }

    pub fn program(&self) -> &Program {
        &self.p
    }

    pub fn finish(self) -> Program {
        self.p
    }

    fn fresh(&mut self) -> Reg {
        self.next += 1;
        Reg::Virt(self.next - 1)
    }

    pub fn emit(&mut self, op: VecOp, srcs: Vec<Src>, q: u16, flags: Flags, step: i64) -> Reg {
        let d = self.fresh();
        let mut v = VecInstr::new(op, Dst::Reg(d), srcs, q);
        v.flags = flags;
        v.step = step;
        self.p.instrs.push(Instr::Vec(v));
        d
    }

    pub fn mul(&mut self, a: Reg, b: Src, q: u16) -> Reg {
        self.emit(VecOp::Mmul, vec![Src::Reg(a), b], q, Flags::default(), 0)
    }

    pub fn add(&mut self, a: Reg, b: Src, q: u16) -> Reg {
        self.emit(VecOp::Mmad, vec![Src::Reg(a), b], q, Flags::default(), 0)
    }

    /// `acc + a·b` as a separate multiply and add.
    pub fn mul_add(&mut self, acc: Option<Reg>, a: Reg, b: Src, q: u16) -> Reg {
        let t = self.mul(a, b, q);
        match acc {
            Some(s) => self.add(s, Src::Reg(t), q),
            None => t,
        }
    }

    pub fn ntt(&mut self, a: Reg, q: u16) -> Reg {
        self.emit(VecOp::Ntt, vec![Src::Reg(a)], q, Flags::default(), 0)
    }

    pub fn intt(&mut self, a: Reg, q: u16) -> Reg {
        self.emit(VecOp::Intt, vec![Src::Reg(a)], q, Flags::default(), 0)
    }

    pub fn auto(&mut self, a: Reg, step: i64, q: u16) -> Reg {
        self.emit(VecOp::Auto, vec![Src::Reg(a)], q, Flags::default(), step)
    }

    pub fn load(&mut self, sym: u32, off: usize, q: u16) -> Reg {
        self.emit(VecOp::Load, vec![mem(sym, off)], q, Flags::default(), 0)
    }

    pub fn store(&mut self, r: Reg, sym: u32, off: usize, q: u16) {
        self.p.instrs.push(Instr::Vec(VecInstr::new(
            VecOp::Store,
            Dst::Mem(Addr::new(sym, off as u32)),
            vec![Src::Reg(r)],
            q,
        )));
    }

    pub fn bconv(&mut self, srcs: Vec<Reg>, targets: Vec<u16>) -> Vec<Reg> {
        let dsts: Vec<Reg> = targets.iter().map(|_| self.fresh()).collect();
        self.p.instrs.push(Instr::Bconv(BconvInstr {
            dsts: dsts.clone(),
            srcs,
            targets,
        }));
        dsts
    }
}

/// The prime chain `q_0..q_{L-1}, p_0..p_{α-1}` of a parameter set, with
/// modulus index `i` for `q_i` and `L + j` for `p_j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    pub n: usize,
    pub levels: usize,
    pub alpha: usize,
    pub q: Vec<u64>,
    pub p: Vec<u64>,
}

impl Chain {
    pub fn new(n: usize, levels: usize, dnum: usize) -> Result<Self, CkksError> {
        let params = CkksParams::desk(n, levels, dnum);
        let (q, p) = params.chain_values()?;
        Ok(Chain {
            n,
            levels,
            alpha: params.alpha(),
            q,
            p,
        })
    }

    pub fn moduli(&self) -> Vec<u64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    /// Limbs of an evaluation-key digit component.
    pub fn key_width(&self) -> usize {
        self.levels + self.alpha
    }

    pub fn digits(&self, l: usize) -> Vec<Range<usize>> {
        let a = self.alpha;
        (0..l.div_ceil(a)).map(|d| d * a..((d + 1) * a).min(l)).collect()
    }

    /// Modulus index of limb `t` of `C_l ∪ B`; also its key limb index.
    pub fn ext_modulus(&self, l: usize, t: usize) -> u16 {
        if t < l {
            t as u16
        } else {
            (self.levels + t - l) as u16
        }
    }

    pub fn p_inv_mod_q(&self, i: usize) -> u64 {
        let q = self.q[i];
        let prod = self.p.iter().fold(1 % q, |acc, &pj| mul_mod(acc, pj % q, q));
        pow_mod(prod, q - 2, q)
    }
}

/// A ciphertext as limb registers of `c0` and `c1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ct {
    pub c0: Vec<Reg>,
    pub c1: Vec<Reg>,
}

impl Ct {
    pub fn limbs(&self) -> usize {
        self.c0.len()
    }

    /// Drops the top limbs, a free level adjustment.
    pub fn truncate(&self, l: usize) -> Ct {
        Ct {
            c0: self.c0[..l].to_vec(),
            c1: self.c1[..l].to_vec(),
        }
    }
}

/// An evaluation key in DRAM: digit `d`, limb `k` of the `b` (resp. `a`)
/// component lives at `@b + d·(L+α) + k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyRef {
    pub b: u32,
    pub a: u32,
}

/// Ciphertext-level emission on top of a [`Builder`].
#[derive(Clone, Debug)]
pub struct He {
    pub b: Builder,
    pub ch: Chain,
}

impl He {
    pub fn new(ch: Chain) -> Self {
        He {
            b: Builder::new(ch.n, ch.moduli()),
            ch,
        }
    }

    pub fn key(&mut self, name: &str, dnum: usize) -> KeyRef {
        let size = dnum * self.ch.key_width();
        KeyRef {
            b: self.b.sym(&format!("{name}_b"), size),
            a: self.b.sym(&format!("{name}_a"), size),
        }
    }

    pub fn load_poly(&mut self, sym: u32, base: usize, l: usize) -> Vec<Reg> {
        (0..l).map(|i| self.b.load(sym, base + i, i as u16)).collect()
    }

    pub fn store_poly(&mut self, x: &[Reg], sym: u32, base: usize) {
        for (i, &r) in x.iter().enumerate() {
            self.b.store(r, sym, base + i, i as u16);
        }
    }

    pub fn load_ct(&mut self, sym: u32, base: usize, l: usize) -> Ct {
        Ct {
            c0: self.load_poly(sym, base, l),
            c1: self.load_poly(sym, base + l, l),
        }
    }

    pub fn store_ct(&mut self, ct: &Ct, sym: u32, base: usize) {
        self.store_poly(&ct.c0, sym, base);
        self.store_poly(&ct.c1, sym, base + ct.limbs());
    }

    /// Base conversion of NTT-domain SM limbs with moduli `src` to `dst`,
    /// returning NTT-domain SM limbs.
    fn convert(&mut self, x: &[Reg], src: &[u16], dst: Vec<u16>) -> Vec<Reg> {
        let nm: Vec<Reg> = x
            .iter()
            .zip(src)
            .map(|(&r, &m)| {
                let c = self.b.intt(r, m);
                self.b.emit(VecOp::Mmul, vec![Src::Reg(c), imm(1, MontgomeryForm::Nm)], m, BC, 0)
            })
            .collect();
        let conv = self.b.bconv(nm, dst.clone());
        conv.into_iter()
            .zip(dst)
            .map(|(r, m)| {
                let s = self.b.emit(VecOp::Mmul, vec![Src::Reg(r), imm(1, MontgomeryForm::Dm)], m, BC, 0);
                self.b.ntt(s, m)
            })
            .collect()
    }

    /// Digit decomposition and extension of `x` (on `C_l`) to `C_l ∪ B`,
    /// one limb vector per digit.
    pub fn mod_up(&mut self, x: &[Reg]) -> Vec<Vec<Reg>> {
        let l = x.len();
        let mut out = Vec::new();
        for r in self.ch.digits(l) {
            let src: Vec<u16> = r.clone().map(|i| i as u16).collect();
            let mut dst: Vec<u16> = (0..l).filter(|i| !r.contains(i)).map(|i| i as u16).collect();
            dst.extend((0..self.ch.alpha).map(|j| (self.ch.levels + j) as u16));
            let conv = self.convert(&x[r.clone()], &src, dst);
            let mut conv = conv.into_iter();
            let mut ext = Vec::with_capacity(l + self.ch.alpha);
            for (i, &xi) in x.iter().enumerate() {
                ext.push(if r.contains(&i) { xi } else { conv.next().expect("target covers C_l") });
            }
            ext.extend(conv);
            out.push(ext);
        }
        out
    }

    /// `Σ_d ext_d · key_d` for one key component over `C_l ∪ B`.
    pub fn inner_product(&mut self, ext: &[Vec<Reg>], l: usize, sym: u32) -> Vec<Reg> {
        let w = self.ch.key_width();
        (0..l + self.ch.alpha)
            .map(|t| {
                let m = self.ch.ext_modulus(l, t);
                let mut acc = None;
                for (d, e) in ext.iter().enumerate() {
                    acc = Some(self.b.mul_add(acc, e[t], mem(sym, d * w + m as usize), m));
                }
                acc.expect("at least one digit")
            })
            .collect()
    }

    /// Division by `P` with rounding down, back to `C_l`.
    pub fn mod_down(&mut self, acc: &[Reg], l: usize) -> Vec<Reg> {
        let src: Vec<u16> = (0..self.ch.alpha).map(|j| (self.ch.levels + j) as u16).collect();
        let conv = self.convert(&acc[l..], &src, (0..l as u16).collect());
        (0..l)
            .map(|i| {
                let q = self.ch.q[i];
                let p_inv = self.ch.p_inv_mod_q(i);
                let u = self.b.mul(conv[i], imm((q - p_inv) % q, MontgomeryForm::Sm), i as u16);
                self.b.mul_add(Some(u), acc[i], imm(p_inv, MontgomeryForm::Sm), i as u16)
            })
            .collect()
    }

    pub fn key_switch(&mut self, x: &[Reg], key: KeyRef) -> (Vec<Reg>, Vec<Reg>) {
        let ext = self.mod_up(x);
        self.switch_extended(&ext, x.len(), key)
    }

    fn switch_extended(&mut self, ext: &[Vec<Reg>], l: usize, key: KeyRef) -> (Vec<Reg>, Vec<Reg>) {
        let a0 = self.inner_product(ext, l, key.b);
        let a1 = self.inner_product(ext, l, key.a);
        let k0 = self.mod_down(&a0, l);
        let k1 = self.mod_down(&a1, l);
        (k0, k1)
    }

    pub fn add_poly(&mut self, a: &[Reg], b: &[Reg]) -> Vec<Reg> {
        a.iter().zip(b).enumerate().map(|(i, (&x, &y))| self.b.add(x, Src::Reg(y), i as u16)).collect()
    }

    pub fn add_ct(&mut self, a: &Ct, b: &Ct) -> Ct {
        let l = a.limbs().min(b.limbs());
        Ct {
            c0: self.add_poly(&a.c0[..l], &b.c0[..l]),
            c1: self.add_poly(&a.c1[..l], &b.c1[..l]),
        }
    }

    /// `acc + ct·pt` with a plaintext at `@sym + base`.
    pub fn pt_mul_acc(&mut self, acc: Option<&Ct>, ct: &Ct, sym: u32, base: usize) -> Ct {
        let l = ct.limbs();
        let mut c = [Vec::with_capacity(l), Vec::with_capacity(l)];
        for (k, poly) in [&ct.c0, &ct.c1].into_iter().enumerate() {
            for i in 0..l {
                let prev = acc.map(|a| if k == 0 { a.c0[i] } else { a.c1[i] });
                c[k].push(self.b.mul_add(prev, poly[i], mem(sym, base + i), i as u16));
            }
        }
        let [c0, c1] = c;
        Ct { c0, c1 }
    }

    /// `acc + ct·c` for an integer constant `c` (the same in every limb).
    pub fn const_mul_acc(&mut self, acc: Option<&Ct>, ct: &Ct, c: u64) -> Ct {
        let l = ct.limbs();
        let mut out = [Vec::with_capacity(l), Vec::with_capacity(l)];
        for (k, poly) in [&ct.c0, &ct.c1].into_iter().enumerate() {
            for i in 0..l {
                let q = self.ch.q[i];
                let prev = acc.map(|a| if k == 0 { a.c0[i] } else { a.c1[i] });
                out[k].push(self.b.mul_add(prev, poly[i], imm(c % q, MontgomeryForm::Sm), i as u16));
            }
        }
        let [c0, c1] = out;
        Ct { c0, c1 }
    }

    /// Rounded division by the last prime, dropping it.
    pub fn rescale_poly(&mut self, c: &[Reg]) -> Vec<Reg> {
        let l = c.len();
        let last = (l - 1) as u16;
        let ql = self.ch.q[l - 1];
        let half = ql >> 1;
        let w = self.b.intt(c[l - 1], last);
        let w = self.b.mul(w, imm(1, MontgomeryForm::Nm), last);
        let w = self.b.add(w, imm(half, MontgomeryForm::Nm), last);
        (0..l - 1)
            .map(|i| {
                let q = self.ch.q[i];
                let inv = pow_mod(ql % q, q - 2, q);
                let m = i as u16;
                let cross = Flags {
                    cross: true,
                    ..Flags::default()
                };
                let z = self.b.emit(VecOp::Mmul, vec![Src::Reg(w), imm((q - inv) % q, MontgomeryForm::Dm)], m, cross, 0);
                let z = self.b.add(z, imm(mul_mod(half % q, inv, q), MontgomeryForm::Sm), m);
                let z = self.b.ntt(z, m);
                self.b.mul_add(Some(z), c[i], imm(inv, MontgomeryForm::Sm), m)
            })
            .collect()
    }

    pub fn rescale(&mut self, ct: &Ct) -> Ct {
        Ct {
            c0: self.rescale_poly(&ct.c0),
            c1: self.rescale_poly(&ct.c1),
        }
    }

    /// Tensor product, relinearization and rescale; operands are first
    /// brought to a common level.
    pub fn hmult(&mut self, a: &Ct, b: &Ct, relin: KeyRef) -> Ct {
        let l = a.limbs().min(b.limbs());
        let (a, b) = (a.truncate(l), b.truncate(l));
        let mut d0 = Vec::with_capacity(l);
        let mut d1 = Vec::with_capacity(l);
        let mut d2 = Vec::with_capacity(l);
        for i in 0..l {
            let m = i as u16;
            d0.push(self.b.mul(a.c0[i], Src::Reg(b.c0[i]), m));
            let t = self.b.mul(a.c0[i], Src::Reg(b.c1[i]), m);
            d1.push(self.b.mul_add(Some(t), a.c1[i], Src::Reg(b.c0[i]), m));
            d2.push(self.b.mul(a.c1[i], Src::Reg(b.c1[i]), m));
        }
        let (k0, k1) = self.key_switch(&d2, relin);
        let ct = Ct {
            c0: self.add_poly(&d0, &k0),
            c1: self.add_poly(&d1, &k1),
        };
        self.rescale(&ct)
    }

    fn auto_poly(&mut self, x: &[Reg], step: i64) -> Vec<Reg> {
        x.iter().enumerate().map(|(i, &r)| self.b.auto(r, step, i as u16)).collect()
    }

    /// Rotation by a normalized nonzero step.
    pub fn hrot(&mut self, ct: &Ct, step: i64, key: KeyRef) -> Ct {
        let c0 = self.auto_poly(&ct.c0, step);
        let c1 = self.auto_poly(&ct.c1, step);
        let (k0, k1) = self.key_switch(&c1, key);
        Ct {
            c0: self.add_poly(&c0, &k0),
            c1: k1,
        }
    }

    /// Rotations sharing one decomposition of `c1`. `None` keys mark the
    /// zero step, which returns the input.
    pub fn hoisted(&mut self, ct: &Ct, steps: &[(i64, Option<KeyRef>)]) -> Vec<Ct> {
        let l = ct.limbs();
        let ext = self.mod_up(&ct.c1);
        steps
            .iter()
            .map(|&(step, key)| {
                let Some(key) = key else { return ct.clone() };
                let rotated: Vec<Vec<Reg>> = ext
                    .iter()
                    .map(|limbs| {
                        limbs
                            .iter()
                            .enumerate()
                            .map(|(t, &r)| {
                                let m = self.ch.ext_modulus(l, t);
                                self.b.auto(r, step, m)
                            })
                            .collect()
                    })
                    .collect();
                let (k0, k1) = self.switch_extended(&rotated, l, key);
                let c0 = self.auto_poly(&ct.c0, step);
                Ct {
                    c0: self.add_poly(&c0, &k0),
                    c1: k1,
                }
            })
            .collect()
    }
}
