//! Ciphertext operations.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::encoding::Encoder;
use super::keys::{gaussian, normalize_step, signed_to_ntt, uniform_poly, EvalKey, KeySet, SecretKey};
use super::{CkksContext, CkksError};
use crate::kernels::{
    automorphism_ntt, bconv_merged, bconv_with, lift, mac_fused, mac_fused_scalar, ntt_fwd,
    ntt_inv, vec_madd, vec_madd_scalar, vec_mmul, vec_mmul_scalar, vec_mmul_scalar_absorb, vec_neg,
    BconvTables,
};
use crate::poly::{Layout, ResiduePoly, RnsPoly, Scalar};
use crate::rns::MontgomeryForm;

/// An encoded message: NTT-domain SM limbs plus its scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub poly: RnsPoly,
    pub scale: f64,
}

/// `(c0, c1)` decrypting to `c0 + c1·s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub c0: RnsPoly,
    pub c1: RnsPoly,
    pub scale: f64,
}

impl Ciphertext {
    pub fn limbs(&self) -> usize {
        self.c0.len()
    }

    /// Index of the last active prime; a fresh ciphertext sits at `L - 1`.
    pub fn level(&self) -> usize {
        self.c0.len() - 1
    }
}

fn check_ntt_sm(p: &RnsPoly) -> Result<(), CkksError> {
    if let Some(l) = p.layout() {
        if l != Layout::ntt(MontgomeryForm::Sm) {
            return Err(CkksError::Kernel(crate::poly::KernelError::WrongLayout {
                op: "ciphertext operation",
                expected: "ntt/brv/sm".into(),
                found: l,
            }));
        }
    }
    Ok(())
}

fn same_scale(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Secret-key encryption of a plaintext.
pub fn encrypt(ctx: &CkksContext, sk: &SecretKey, pt: &Plaintext, seed: u64) -> Result<Ciphertext, CkksError> {
    let l = pt.poly.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let basis = ctx.basis_q(l);
    let a = uniform_poly(&basis, &mut rng);
    let e = signed_to_ntt(&basis, &gaussian(ctx.n(), ctx.params().sigma, &mut rng))?;
    let s = sk.on_q(l);
    // c0 = -a·s + e + m
    let mut c0 = Vec::with_capacity(l);
    for i in 0..l {
        let t = mac_fused(e.limb(i), &vec_neg(a.limb(i))?, s.limb(i))?;
        c0.push(vec_madd(&t, pt.poly.limb(i))?);
    }
    Ok(Ciphertext {
        c0: RnsPoly::new(basis, c0)?,
        c1: a,
        scale: pt.scale,
    })
}

/// Fresh encryption of zero on `l` limbs.
pub fn encrypt_zero(ctx: &CkksContext, sk: &SecretKey, l: usize, scale: f64, seed: u64) -> Result<Ciphertext, CkksError> {
    let pt = Plaintext {
        poly: RnsPoly::zero(ctx.basis_q(l), Layout::ntt(MontgomeryForm::Sm)),
        scale,
    };
    encrypt(ctx, sk, &pt, seed)
}

fn decode_ntt(ctx: &CkksContext, m: &RnsPoly, scale: f64) -> Result<Vec<Complex64>, CkksError> {
    let coeff = m.map_limbs(|x| ntt_inv(x, false))?;
    Ok(Encoder::new(ctx.n()).decode(&coeff, scale))
}

/// Decrypts and decodes all `n/2` slots.
pub fn decrypt(ctx: &CkksContext, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<Complex64>, CkksError> {
    let s = sk.on_q(ct.limbs());
    let mut limbs = Vec::with_capacity(ct.limbs());
    for i in 0..ct.limbs() {
        limbs.push(mac_fused(ct.c0.limb(i), ct.c1.limb(i), s.limb(i))?);
    }
    let m = RnsPoly::new(ct.c0.basis().clone(), limbs)?;
    decode_ntt(ctx, &m, ct.scale)
}

/// Decrypts a three-component ciphertext under `(1, s, s^2)`.
pub fn decrypt_three(
    ctx: &CkksContext,
    sk: &SecretKey,
    d0: &RnsPoly,
    d1: &RnsPoly,
    d2: &RnsPoly,
    scale: f64,
) -> Result<Vec<Complex64>, CkksError> {
    let s = sk.on_q(d0.len());
    let mut limbs = Vec::with_capacity(d0.len());
    for i in 0..d0.len() {
        let s2 = vec_mmul(s.limb(i), s.limb(i))?;
        let t = mac_fused(d0.limb(i), d1.limb(i), s.limb(i))?;
        limbs.push(mac_fused(&t, d2.limb(i), &s2)?);
    }
    let m = RnsPoly::new(d0.basis().clone(), limbs)?;
    decode_ntt(ctx, &m, scale)
}

pub fn hadd(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CkksError> {
    if a.limbs() != b.limbs() {
        return Err(CkksError::LevelMismatch(a.level(), b.level()));
    }
    if !same_scale(a.scale, b.scale) {
        return Err(CkksError::ScaleMismatch(a.scale, b.scale));
    }
    Ok(Ciphertext {
        c0: a.c0.zip_limbs(&b.c0, vec_madd)?,
        c1: a.c1.zip_limbs(&b.c1, vec_madd)?,
        scale: a.scale,
    })
}

fn extended_limbs(
    ctx: &CkksContext,
    x: &RnsPoly,
    d: usize,
    tables: &BconvTables,
    merged: bool,
) -> Result<Vec<ResiduePoly>, CkksError> {
    let l = x.len();
    let range = ctx.digits(l)[d].clone();
    let src_basis = ctx.basis_range(range.clone());
    let src_limbs = x.limbs()[range.clone()].to_vec();
    let src = RnsPoly::new(src_basis, src_limbs)?;
    let conv = if merged {
        let deferred = src.map_limbs(|p| ntt_inv(p, true))?;
        bconv_merged(&deferred, tables)?
    } else {
        let exact = src.map_limbs(|p| Ok(ntt_inv(p, false)?.to_form(MontgomeryForm::Nm)))?;
        bconv_with(&exact, tables)?.map_limbs(|p| Ok(p.to_form(MontgomeryForm::Sm)))?
    };
    let conv = conv.map_limbs(ntt_fwd)?.into_limbs();
    let mut conv = conv.into_iter();
    let mut out = Vec::with_capacity(l + ctx.p_moduli().len());
    for i in 0..l {
        if range.contains(&i) {
            out.push(x.limb(i).clone());
        } else {
            out.push(conv.next().expect("target covers C_l outside the digit"));
        }
    }
    out.extend(conv);
    Ok(out)
}

/// Raises digit `d` of `x` to `C_l ∪ B`: the digit's own limbs are kept, the
/// rest come from a merged base conversion.
pub fn mod_up_digit(ctx: &CkksContext, x: &RnsPoly, d: usize) -> Result<RnsPoly, CkksError> {
    let limbs = extended_limbs(ctx, x, d, ctx.mod_up_tables(x.len(), d), true)?;
    Ok(RnsPoly::new(ctx.basis_qp(x.len()), limbs)?)
}

/// Index of the key limb matching limb `t` of `C_l ∪ B`.
fn key_index(ctx: &CkksContext, l: usize, t: usize) -> usize {
    if t < l {
        t
    } else {
        ctx.params().levels + (t - l)
    }
}

fn inner_product(
    ctx: &CkksContext,
    ext: &[Vec<ResiduePoly>],
    evk: &EvalKey,
    l: usize,
    component: usize,
) -> Result<Vec<ResiduePoly>, CkksError> {
    let width = l + ctx.p_moduli().len();
    let mut acc = Vec::with_capacity(width);
    for t in 0..width {
        let k = key_index(ctx, l, t);
        let mut sum: Option<ResiduePoly> = None;
        for (d, e) in ext.iter().enumerate() {
            let (b, a) = evk.digit(d);
            let key = if component == 0 { b.limb(k) } else { a.limb(k) };
            sum = Some(match sum {
                None => vec_mmul(&e[t], key)?,
                Some(s) => mac_fused(&s, &e[t], key)?,
            });
        }
        acc.push(sum.expect("at least one digit"));
    }
    Ok(acc)
}

fn mod_down(ctx: &CkksContext, acc: Vec<ResiduePoly>, l: usize, merged: bool) -> Result<RnsPoly, CkksError> {
    let tables = ctx.mod_down_tables(l);
    let b_part = RnsPoly::new(ctx.basis_p(), acc[l..].to_vec())?;
    let conv = if merged {
        bconv_merged(&b_part.map_limbs(|p| ntt_inv(p, true))?, tables)?
    } else {
        let exact = b_part.map_limbs(|p| Ok(ntt_inv(p, false)?.to_form(MontgomeryForm::Nm)))?;
        bconv_with(&exact, tables)?.map_limbs(|p| Ok(p.to_form(MontgomeryForm::Sm)))?
    };
    let conv = conv.map_limbs(ntt_fwd)?;
    let mut out = Vec::with_capacity(l);
    for i in 0..l {
        let m = &ctx.q_moduli()[i];
        let p_inv = ctx.p_inv_mod_q(i);
        let neg = Scalar::encode(m.neg(p_inv), MontgomeryForm::Sm, m);
        let pos = Scalar::encode(p_inv, MontgomeryForm::Sm, m);
        let u = vec_mmul_scalar(conv.limb(i), neg)?;
        out.push(mac_fused_scalar(&u, &acc[i], pos)?);
    }
    Ok(RnsPoly::new(ctx.basis_q(l), out)?)
}

fn key_switch_impl(ctx: &CkksContext, x: &RnsPoly, evk: &EvalKey, merged: bool) -> Result<(RnsPoly, RnsPoly), CkksError> {
    check_ntt_sm(x)?;
    let l = x.len();
    if l == 0 || l > ctx.params().levels || x.basis() != &ctx.basis_q(l) {
        return Err(CkksError::Kernel(crate::poly::KernelError::BasisMismatch(
            "key-switch input is not a prefix of the ciphertext chain".into(),
        )));
    }
    let digits = ctx.digits(l);
    if evk.dnum() < digits.len() || evk.digit(0).0.len() != ctx.key_basis().len() {
        return Err(CkksError::Kernel(crate::poly::KernelError::BasisMismatch(
            "evaluation key does not match the parameter set".into(),
        )));
    }
    let ext = (0..digits.len())
        .map(|d| extended_limbs(ctx, x, d, ctx.mod_up_tables(l, d), merged))
        .collect::<Result<Vec<_>, _>>()?;
    let k0 = mod_down(ctx, inner_product(ctx, &ext, evk, l, 0)?, l, merged)?;
    let k1 = mod_down(ctx, inner_product(ctx, &ext, evk, l, 1)?, l, merged)?;
    Ok((k0, k1))
}

/// Hybrid key switching of `x` (NTT-domain SM limbs on `C_l`). Returns
/// `(k0, k1)` with `k0 + k1·s ≈ x·s'`, where `s'` is the key `evk` switches
/// away from.
pub fn key_switch(ctx: &CkksContext, x: &RnsPoly, evk: &EvalKey) -> Result<(RnsPoly, RnsPoly), CkksError> {
    key_switch_impl(ctx, x, evk, true)
}

/// [`key_switch`] with plain base conversion and explicit `1/n` and
/// representation conversions, for equivalence checks.
pub fn key_switch_unmerged(ctx: &CkksContext, x: &RnsPoly, evk: &EvalKey) -> Result<(RnsPoly, RnsPoly), CkksError> {
    key_switch_impl(ctx, x, evk, false)
}

/// Divides by the last prime with rounding and drops it.
pub fn rescale(ctx: &CkksContext, ct: &Ciphertext) -> Result<Ciphertext, CkksError> {
    let l = ct.limbs();
    if l < 2 {
        return Err(CkksError::LevelExhausted);
    }
    let last = &ctx.q_moduli()[l - 1];
    let ql = last.value();
    let half = ql >> 1;
    let rescale_poly = |c: &RnsPoly| -> Result<RnsPoly, CkksError> {
        check_ntt_sm(c)?;
        let deferred = ntt_inv(c.limb(l - 1), true)?;
        let v = vec_mmul_scalar_absorb(&deferred, Scalar::new(last.n_inv(), MontgomeryForm::Nm))?;
        let w = vec_madd_scalar(&v, Scalar::new(half, MontgomeryForm::Nm))?;
        let mut out = Vec::with_capacity(l - 1);
        for i in 0..l - 1 {
            let m = &ctx.q_moduli()[i];
            let inv = m.inv(ql % m.value());
            let lw = lift(&w, m)?;
            let z = vec_mmul_scalar(&lw, Scalar::encode(m.neg(inv), MontgomeryForm::Dm, m))?;
            let z = vec_madd_scalar(&z, Scalar::encode(m.mul(half % m.value(), inv), MontgomeryForm::Sm, m))?;
            let z = ntt_fwd(&z)?;
            out.push(mac_fused_scalar(&z, c.limb(i), Scalar::encode(inv, MontgomeryForm::Sm, m))?);
        }
        Ok(RnsPoly::new(ctx.basis_q(l - 1), out)?)
    };
    Ok(Ciphertext {
        c0: rescale_poly(&ct.c0)?,
        c1: rescale_poly(&ct.c1)?,
        scale: ct.scale / ql as f64,
    })
}

/// The three tensor components `(a0·b0, a0·b1 + a1·b0, a1·b1)`.
pub fn tensor(a: &Ciphertext, b: &Ciphertext) -> Result<(RnsPoly, RnsPoly, RnsPoly), CkksError> {
    if a.limbs() != b.limbs() {
        return Err(CkksError::LevelMismatch(a.level(), b.level()));
    }
    let d0 = a.c0.zip_limbs(&b.c0, vec_mmul)?;
    let t = a.c0.zip_limbs(&b.c1, vec_mmul)?;
    let mut d1 = Vec::with_capacity(a.limbs());
    for i in 0..a.limbs() {
        d1.push(mac_fused(t.limb(i), a.c1.limb(i), b.c0.limb(i))?);
    }
    let d1 = RnsPoly::new(a.c0.basis().clone(), d1)?;
    let d2 = a.c1.zip_limbs(&b.c1, vec_mmul)?;
    Ok((d0, d1, d2))
}

/// Multiplication with relinearization and rescale.
pub fn hmult(ctx: &CkksContext, a: &Ciphertext, b: &Ciphertext, relin: &EvalKey) -> Result<Ciphertext, CkksError> {
    if a.limbs() != b.limbs() {
        return Err(CkksError::LevelMismatch(a.level(), b.level()));
    }
    if a.limbs() < 2 {
        return Err(CkksError::LevelExhausted);
    }
    let (d0, d1, d2) = tensor(a, b)?;
    let (k0, k1) = key_switch(ctx, &d2, relin)?;
    let ct = Ciphertext {
        c0: d0.zip_limbs(&k0, vec_madd)?,
        c1: d1.zip_limbs(&k1, vec_madd)?,
        scale: a.scale * b.scale,
    };
    rescale(ctx, &ct)
}

/// Left rotation of the slots by `step`.
pub fn hrot(ctx: &CkksContext, ct: &Ciphertext, step: i64, keys: &KeySet) -> Result<Ciphertext, CkksError> {
    let step = normalize_step(step, ctx.n());
    if step == 0 {
        return Ok(ct.clone());
    }
    let key = keys.rotation_key(step, ctx.n()).ok_or(CkksError::MissingRotationKey(step))?;
    let c0 = ct.c0.map_limbs(|p| automorphism_ntt(p, step))?;
    let c1 = ct.c1.map_limbs(|p| automorphism_ntt(p, step))?;
    let (k0, k1) = key_switch(ctx, &c1, key)?;
    Ok(Ciphertext {
        c0: c0.zip_limbs(&k0, vec_madd)?,
        c1: k1,
        scale: ct.scale,
    })
}

/// Several rotations of one ciphertext sharing a single digit decomposition
/// and base extension of `c1`; each rotation permutes the extended limbs
/// instead of re-running the conversion.
pub fn hoisted_rotations(
    ctx: &CkksContext,
    ct: &Ciphertext,
    steps: &[i64],
    keys: &KeySet,
) -> Result<Vec<Ciphertext>, CkksError> {
    check_ntt_sm(&ct.c1)?;
    let l = ct.limbs();
    let digits = ctx.digits(l);
    let ext = (0..digits.len())
        .map(|d| extended_limbs(ctx, &ct.c1, d, ctx.mod_up_tables(l, d), true))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(steps.len());
    for &s in steps {
        let step = normalize_step(s, ctx.n());
        if step == 0 {
            out.push(ct.clone());
            continue;
        }
        let key = keys.rotation_key(step, ctx.n()).ok_or(CkksError::MissingRotationKey(step))?;
        let rotated = ext
            .iter()
            .map(|limbs| limbs.iter().map(|p| automorphism_ntt(p, step)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let k0 = mod_down(ctx, inner_product(ctx, &rotated, key, l, 0)?, l, true)?;
        let k1 = mod_down(ctx, inner_product(ctx, &rotated, key, l, 1)?, l, true)?;
        let c0 = ct.c0.map_limbs(|p| automorphism_ntt(p, step))?;
        out.push(Ciphertext {
            c0: c0.zip_limbs(&k0, vec_madd)?,
            c1: k1,
            scale: ct.scale,
        });
    }
    Ok(out)
}
