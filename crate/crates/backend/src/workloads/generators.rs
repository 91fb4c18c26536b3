//! Benchmark kernels as SSA IR.

use std::collections::BTreeMap;

use effact_core::ckks::normalize_step;
use effact_core::MontgomeryForm;

use super::builder::{imm, Chain, Ct, He, KeyRef};
use super::{WorkloadError, WorkloadParams};
use crate::ir::{Flags, Program, Src, VecOp};

fn new_he(p: &WorkloadParams) -> Result<He, WorkloadError> {
    Ok(He::new(Chain::new(p.n, p.levels, p.dnum)?))
}

/// Hybrid key switching of `@d2` (NTT-domain SM limbs on `C_l`) with the
/// key `@evk_b`/`@evk_a`; results go to `@k0` and `@k1`.
pub fn gen_keyswitch(p: &WorkloadParams) -> Result<Program, WorkloadError> {
    p.validate()?;
    let mut he = new_he(p)?;
    let l = p.limbs;
    let d2 = he.b.sym("d2", l);
    let key = he.key("evk", p.dnum);
    let o0 = he.b.sym("k0", l);
    let o1 = he.b.sym("k1", l);
    let x = he.load_poly(d2, 0, l);
    let (k0, k1) = he.key_switch(&x, key);
    he.store_poly(&k0, o0, 0);
    he.store_poly(&k1, o1, 0);
    Ok(he.b.finish())
}

/// Rotation keys created on demand, one `rk<step>` pair per normalized step.
struct Keys {
    n: usize,
    dnum: usize,
    map: BTreeMap<i64, KeyRef>,
}

impl Keys {
    fn new(p: &WorkloadParams) -> Self {
        Keys {
            n: p.n,
            dnum: p.dnum,
            map: BTreeMap::new(),
        }
    }

    fn step(&mut self, he: &mut He, amount: i64) -> (i64, Option<KeyRef>) {
        let s = normalize_step(amount, self.n);
        if s == 0 {
            return (0, None);
        }
        let dnum = self.dnum;
        let key = *self.map.entry(s).or_insert_with(|| he.key(&format!("rk{s}"), dnum));
        (s, Some(key))
    }
}

/// Steps of the hoisted-rotation kernel: `1..=rotations`, normalized.
pub fn rotation_steps(p: &WorkloadParams) -> Vec<i64> {
    (1..=p.rotations as i64).map(|s| normalize_step(s, p.n)).collect()
}

/// Rotations of `@ct` (c0 limbs then c1 limbs) by every step of
/// [`rotation_steps`], sharing one decomposition. Rotation `j` goes to
/// `@out + 2lj`.
pub fn gen_hoisted_rotations(p: &WorkloadParams) -> Result<Program, WorkloadError> {
    p.validate()?;
    let mut he = new_he(p)?;
    let l = p.limbs;
    let steps = rotation_steps(p);
    let ct_sym = he.b.sym("ct", 2 * l);
    let out = he.b.sym("out", 2 * l * steps.len());
    let mut keys = Keys::new(p);
    let plan: Vec<(i64, Option<KeyRef>)> = steps.iter().map(|&s| keys.step(&mut he, s)).collect();
    let ct = he.load_ct(ct_sym, 0, l);
    for (j, r) in he.hoisted(&ct, &plan).iter().enumerate() {
        he.store_ct(r, out, 2 * l * j);
    }
    Ok(he.b.finish())
}

/// One gradient-descent step of encrypted logistic regression: a
/// plaintext-weighted sum over feature ciphertexts, a rotate-and-sum, a
/// cubic sigmoid approximation and a weighted update per feature.
pub fn gen_helr_iteration(p: &WorkloadParams) -> Result<Program, WorkloadError> {
    p.validate()?;
    let l = p.limbs;
    if l < 4 || p.features == 0 {
        return Err(WorkloadError::Invalid("HELR needs l ≥ 4 and at least one feature".into()));
    }
    let mut he = new_he(p)?;
    let f = p.features;
    let xs = he.b.sym("x", 2 * l * f);
    let w = he.b.sym("w", l * f);
    let g = he.b.sym("g", l * f);
    let relin = he.key("rlk", p.dnum);
    let mut keys = Keys::new(p);
    let cts: Vec<Ct> = (0..f).map(|k| he.load_ct(xs, 2 * l * k, l)).collect();

    let mut ip: Option<Ct> = None;
    for (k, ct) in cts.iter().enumerate() {
        ip = Some(he.pt_mul_acc(ip.as_ref(), ct, w, l * k));
    }
    let mut ip = ip.expect("at least one feature");
    for r in 0..p.rotations {
        if let (s, Some(key)) = keys.step(&mut he, 1 << r) {
            let rot = he.hrot(&ip, s, key);
            ip = he.add_ct(&ip, &rot);
        }
    }
    let ip = he.rescale(&ip);
    let sq = he.hmult(&ip, &ip, relin);
    let cube = he.hmult(&sq, &ip, relin);
    let lin = he.const_mul_acc(None, &ip.truncate(cube.limbs()), 5);
    let sig = he.const_mul_acc(Some(&lin), &cube, 3);

    let lo = sig.limbs();
    let out = he.b.sym("grad", 2 * lo * f);
    for (k, ct) in cts.iter().enumerate() {
        let upd = he.pt_mul_acc(Some(&ct.truncate(lo)), &sig, g, l * k);
        he.store_ct(&upd, out, 2 * lo * k);
    }
    Ok(he.b.finish())
}

/// Radix bits of each level of a linear transform over `slots` slots.
fn radix_bits(slots: usize, levels: usize) -> Vec<u32> {
    let log = slots.trailing_zeros() as usize;
    (0..levels)
        .map(|j| (log / levels + usize::from(j < log % levels)) as u32)
        .collect()
}

struct Boot<'a> {
    he: He,
    keys: Keys,
    relin: KeyRef,
    diag: u32,
    next_diag: usize,
    next_const: u64,
    p: &'a WorkloadParams,
}

impl Boot<'_> {
    fn constant(&mut self) -> u64 {
        self.next_const += 1;
        self.next_const * 2 + 1
    }

    /// One sparse-diagonal level with `2r-1` diagonals, evaluated
    /// baby-step/giant-step: hoisted baby rotations, plaintext products,
    /// one full rotation per giant step, then a rescale.
    fn linear_level(&mut self, ct: &Ct, radix: usize, stride: usize) -> Ct {
        let l = ct.limbs();
        let d = (2 * radix - 1).max(1);
        let g1 = (d as f64).sqrt().ceil() as usize;
        let g2 = d.div_ceil(g1);
        let baby: Vec<(i64, Option<KeyRef>)> =
            (0..g1).map(|i| self.keys.step(&mut self.he, (i * stride) as i64)).collect();
        let rot = self.he.hoisted(ct, &baby);
        let mut total: Option<Ct> = None;
        for j in 0..g2 {
            let mut inner: Option<Ct> = None;
            for (i, r) in rot.iter().enumerate() {
                if j * g1 + i >= d {
                    break;
                }
                inner = Some(self.he.pt_mul_acc(inner.as_ref(), r, self.diag, self.next_diag));
                self.next_diag += l;
            }
            let inner = inner.expect("every giant step has a diagonal");
            let part = match self.keys.step(&mut self.he, (j * g1 * stride) as i64) {
                (s, Some(key)) => self.he.hrot(&inner, s, key),
                (_, None) => inner,
            };
            total = Some(match total {
                None => part,
                Some(t) => self.he.add_ct(&t, &part),
            });
        }
        self.he.rescale(&total.expect("at least one giant step"))
    }

    fn linear_transform(&mut self, ct: &Ct, levels: usize, reverse: bool) -> Ct {
        let mut bits = radix_bits(self.p.slots, levels);
        if reverse {
            bits.reverse();
        }
        let mut ct = ct.clone();
        for j in 0..levels {
            let stride = 1usize << bits[j + 1..].iter().sum::<u32>();
            ct = self.linear_level(&ct, 1 << bits[j], stride);
        }
        ct
    }

    fn add_const(&mut self, ct: &Ct, c: i64) -> Ct {
        let c0 = ct
            .c0
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let q = self.he.ch.q[i];
                self.he.b.add(r, imm(c.rem_euclid(q as i64) as u64, MontgomeryForm::Sm), i as u16)
            })
            .collect();
        Ct { c0, c1: ct.c1.clone() }
    }

    /// Polynomial approximation of the modular reduction: a
    /// Paterson–Stockmeyer evaluation in the Chebyshev-style power basis,
    /// followed by double-angle squarings.
    fn eval_mod(&mut self, x: &Ct, levels: usize) -> Ct {
        let da = if levels >= 4 { 2 } else { 0 };
        let depth = levels - da;
        let gb = depth.div_ceil(2);
        let g = 1usize << gb;
        let relin = self.relin;
        // t[k - 1] = T_k.
        let mut t: Vec<Ct> = vec![x.clone()];
        for k in 2..=g {
            let (a, b) = (t[k.div_ceil(2) - 1].clone(), t[k / 2 - 1].clone());
            t.push(self.he.hmult(&a, &b, relin));
        }
        let mut giants = vec![t[g - 1].clone()];
        for _ in 1..depth - gb {
            let last = giants.last().expect("seeded").clone();
            giants.push(self.he.hmult(&last, &last, relin));
        }
        let blocks = 1usize << (depth - gb);
        let low = t[..g - 1].iter().map(Ct::limbs).min().expect("g ≥ 2");
        let mut xs: Vec<Ct> = (0..blocks)
            .map(|_| {
                let mut acc: Option<Ct> = None;
                for tk in &t[..g - 1] {
                    let c = self.constant();
                    acc = Some(self.he.const_mul_acc(acc.as_ref(), &tk.truncate(low), c));
                }
                let c = self.constant();
                self.add_const(&acc.expect("g ≥ 2"), c as i64)
            })
            .collect();
        for gi in &giants {
            if xs.len() == 1 {
                break;
            }
            xs = xs
                .chunks(2)
                .map(|pair| {
                    let hi = self.he.hmult(&pair[1], gi, relin);
                    self.he.add_ct(&pair[0], &hi)
                })
                .collect();
        }
        let mut y = xs.pop().expect("one block remains");
        for _ in 0..da {
            let sq = self.he.hmult(&y, &y, relin);
            let dbl = self.he.const_mul_acc(None, &sq, 2);
            y = self.add_const(&dbl, -1);
        }
        y
    }
}

/// Instruction-count skeleton of fully packed bootstrapping: ModRaise from
/// one limb to `L`, a CtS linear transform over `L_CtS` levels, EvalMod over
/// `L_EvalMod` levels and an StC transform over `L_StC` levels. Input is a
/// one-limb ciphertext at `@ct`, output at `@out`. Executable with any
/// well-formed data, but the constants are placeholders: the result is not a
/// refreshed encryption.
pub fn gen_bootstrap_skeleton(p: &WorkloadParams) -> Result<Program, WorkloadError> {
    p.validate_boot()?;
    let mut he = new_he(p)?;
    let ct_sym = he.b.sym("ct", 2);
    let relin = he.key("rlk", p.dnum);
    let diag = he.b.sym("diag", 0);
    let mut boot = Boot {
        keys: Keys::new(p),
        relin,
        diag,
        next_diag: 0,
        next_const: 0,
        p,
        he,
    };
    let low = boot.he.load_ct(ct_sym, 0, 1);
    let raised = mod_raise(&mut boot.he, &low, p.levels);
    let a = boot.linear_transform(&raised, p.l_cts, false);
    let b = boot.eval_mod(&a, p.l_evalmod);
    let c = boot.linear_transform(&b, p.l_stc, true);
    let mut he = boot.he;
    he.b.sym("diag", boot.next_diag);
    let out = he.b.sym("out", 2 * c.limbs());
    he.store_ct(&c, out, 0);
    Ok(he.b.finish())
}

/// Reinterprets a one-limb ciphertext modulo every prime of `C_L`.
fn mod_raise(he: &mut He, ct: &Ct, levels: usize) -> Ct {
    let cross = Flags {
        cross: true,
        ..Flags::default()
    };
    let mut raise = |r| {
        let w = he.b.intt(r, 0);
        let w = he.b.mul(w, imm(1, MontgomeryForm::Nm), 0);
        (0..levels as u16)
            .map(|i| {
                let s = he.b.emit(VecOp::Mmul, vec![Src::Reg(w), imm(1, MontgomeryForm::Dm)], i, cross, 0);
                he.b.ntt(s, i)
            })
            .collect::<Vec<_>>()
    };
    let c0 = raise(ct.c0[0]);
    let c1 = raise(ct.c1[0]);
    Ct { c0, c1 }
}
