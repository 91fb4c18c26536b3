//! Residue-polynomial vector kernels.
//!
//! These are the operations the vector ISA exposes, one function per
//! instruction class. Everything here is exact modular arithmetic; the only
//! freedom is the Montgomery form of each word, which is tracked in the
//! layout tag and composed by [`MontgomeryForm::after_mul`].

mod automorphism;
mod bconv;
mod ntt;

pub use automorphism::{
    automorphism_apply, automorphism_map, automorphism_ntt, automorphism_ntt_lanes, galois_apply,
    galois_element, transpose_fixed_network, transpose_pattern, AutoPlan, Sign,
    DEFAULT_AUTO_LANES,
};
pub use bconv::{bconv, bconv_merged, bconv_micro_op_count, bconv_with, crt_reconstruct, BconvTables};
pub use ntt::{negacyclic_mul, ntt_fwd, ntt_inv, ntt_fwd_in_place, ntt_inv_in_place};

use crate::poly::{KernelError, Layout, ResiduePoly, Scalar};
use crate::rns::{Modulus, MontgomeryForm};

fn check_pair(a: &ResiduePoly, b: &ResiduePoly) -> Result<(), KernelError> {
    if a.modulus() != b.modulus() {
        return Err(KernelError::ModulusMismatch(
            a.modulus().value(),
            b.modulus().value(),
        ));
    }
    if a.len() != b.len() {
        return Err(KernelError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn not_deferred(op: &'static str, a: &ResiduePoly) -> Result<(), KernelError> {
    if a.is_scale_deferred() {
        Err(KernelError::ScaleDeferred(op))
    } else {
        Ok(())
    }
}

fn mul_form(a: MontgomeryForm, b: MontgomeryForm) -> Result<MontgomeryForm, KernelError> {
    a.after_mul(b).ok_or(KernelError::FormOverflow(a, b))
}

fn same_placement(a: &ResiduePoly, b: &ResiduePoly) -> Result<(), KernelError> {
    let (la, lb) = (a.layout(), b.layout());
    if la.domain != lb.domain || la.order != lb.order {
        return Err(KernelError::LayoutMismatch(la, lb));
    }
    Ok(())
}

/// Elementwise Montgomery product of two limbs.
pub fn vec_mmul(a: &ResiduePoly, b: &ResiduePoly) -> Result<ResiduePoly, KernelError> {
    check_pair(a, b)?;
    not_deferred("vec_mmul", a)?;
    not_deferred("vec_mmul", b)?;
    same_placement(a, b)?;
    let form = mul_form(a.repr(), b.repr())?;
    let m = a.modulus();
    let coeffs = a
        .coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(&x, &y)| m.mont_mul(x, y))
        .collect();
    Ok(ResiduePoly::from_parts(
        m.clone(),
        coeffs,
        a.layout().with_repr(form),
    ))
}

/// Montgomery product of every element with one word.
pub fn vec_mmul_scalar(a: &ResiduePoly, c: Scalar) -> Result<ResiduePoly, KernelError> {
    not_deferred("vec_mmul_scalar", a)?;
    scalar_mul(a, c, a.layout())
}

/// Multiplies a scale-deferred inverse-NTT output by a constant that the
/// caller guarantees already contains the missing `1/n` factor, clearing the
/// deferred flag.
pub fn vec_mmul_scalar_absorb(a: &ResiduePoly, c: Scalar) -> Result<ResiduePoly, KernelError> {
    if !a.is_scale_deferred() {
        return Err(KernelError::WrongLayout {
            op: "vec_mmul_scalar_absorb",
            expected: "a scale-deferred operand".into(),
            found: a.layout(),
        });
    }
    let layout = Layout {
        scale_deferred: false,
        ..a.layout()
    };
    scalar_mul(a, c, layout)
}

fn scalar_mul(a: &ResiduePoly, c: Scalar, layout: Layout) -> Result<ResiduePoly, KernelError> {
    let m = a.modulus();
    check_scalar(m, c)?;
    let form = mul_form(a.repr(), c.form)?;
    let coeffs = a.coeffs().iter().map(|&x| m.mont_mul(x, c.value)).collect();
    Ok(ResiduePoly::from_parts(m.clone(), coeffs, layout.with_repr(form)))
}

fn check_scalar(m: &Modulus, c: Scalar) -> Result<(), KernelError> {
    if c.value >= m.value() {
        return Err(KernelError::Unreduced {
            index: 0,
            value: c.value,
            q: m.value(),
        });
    }
    Ok(())
}

fn check_add(a: &ResiduePoly, b: &ResiduePoly) -> Result<(), KernelError> {
    check_pair(a, b)?;
    not_deferred("vec_madd", a)?;
    not_deferred("vec_madd", b)?;
    if a.layout() != b.layout() {
        return Err(KernelError::LayoutMismatch(a.layout(), b.layout()));
    }
    Ok(())
}

/// Elementwise modular addition; both operands must share a layout.
pub fn vec_madd(a: &ResiduePoly, b: &ResiduePoly) -> Result<ResiduePoly, KernelError> {
    check_add(a, b)?;
    let m = a.modulus();
    let coeffs = a
        .coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(&x, &y)| m.add(x, y))
        .collect();
    Ok(ResiduePoly::from_parts(m.clone(), coeffs, a.layout()))
}

/// Adds one word, in the operand's form, to every element.
pub fn vec_madd_scalar(a: &ResiduePoly, c: Scalar) -> Result<ResiduePoly, KernelError> {
    not_deferred("vec_madd_scalar", a)?;
    let m = a.modulus();
    check_scalar(m, c)?;
    if c.form != a.repr() {
        return Err(KernelError::WrongLayout {
            op: "vec_madd_scalar",
            expected: format!("an immediate in {} form", a.repr()),
            found: a.layout(),
        });
    }
    let coeffs = a.coeffs().iter().map(|&x| m.add(x, c.value)).collect();
    Ok(ResiduePoly::from_parts(m.clone(), coeffs, a.layout()))
}

/// Elementwise additive inverse.
pub fn vec_neg(a: &ResiduePoly) -> Result<ResiduePoly, KernelError> {
    not_deferred("vec_neg", a)?;
    let m = a.modulus();
    let coeffs = a.coeffs().iter().map(|&x| m.neg(x)).collect();
    Ok(ResiduePoly::from_parts(m.clone(), coeffs, a.layout()))
}

/// `a - b`, i.e. addition of the negated operand.
pub fn vec_msub(a: &ResiduePoly, b: &ResiduePoly) -> Result<ResiduePoly, KernelError> {
    vec_madd(a, &vec_neg(b)?)
}

/// `acc + a·b` in one pass, equal to `vec_madd(acc, vec_mmul(a, b))`.
pub fn mac_fused(
    acc: &ResiduePoly,
    a: &ResiduePoly,
    b: &ResiduePoly,
) -> Result<ResiduePoly, KernelError> {
    check_pair(a, b)?;
    check_pair(acc, a)?;
    for p in [acc, a, b] {
        not_deferred("mac_fused", p)?;
    }
    same_placement(a, b)?;
    let layout = a.layout().with_repr(mul_form(a.repr(), b.repr())?);
    if acc.layout() != layout {
        return Err(KernelError::LayoutMismatch(acc.layout(), layout));
    }
    let m = a.modulus();
    let coeffs = acc
        .coeffs()
        .iter()
        .zip(a.coeffs().iter().zip(b.coeffs()))
        .map(|(&s, (&x, &y))| m.add(s, m.mont_mul(x, y)))
        .collect();
    Ok(ResiduePoly::from_parts(m.clone(), coeffs, layout))
}

/// `acc + a·c` for a word `c`.
pub fn mac_fused_scalar(
    acc: &ResiduePoly,
    a: &ResiduePoly,
    c: Scalar,
) -> Result<ResiduePoly, KernelError> {
    check_pair(acc, a)?;
    not_deferred("mac_fused", acc)?;
    not_deferred("mac_fused", a)?;
    let m = a.modulus();
    check_scalar(m, c)?;
    let layout = a.layout().with_repr(mul_form(a.repr(), c.form)?);
    if acc.layout() != layout {
        return Err(KernelError::LayoutMismatch(acc.layout(), layout));
    }
    let coeffs = acc
        .coeffs()
        .iter()
        .zip(a.coeffs())
        .map(|(&s, &x)| m.add(s, m.mont_mul(x, c.value)))
        .collect();
    Ok(ResiduePoly::from_parts(m.clone(), coeffs, layout))
}

/// Reinterprets plain coefficient-domain residues modulo another prime by
/// reducing each word. This is how a limb crosses from one modulus to another
/// inside base conversion.
pub fn lift(a: &ResiduePoly, target: &Modulus) -> Result<ResiduePoly, KernelError> {
    not_deferred("lift", a)?;
    let l = a.layout();
    if l.repr != MontgomeryForm::Nm || l.domain != crate::poly::Domain::Coeff {
        return Err(KernelError::WrongLayout {
            op: "lift",
            expected: "coefficient-domain NM residues".into(),
            found: l,
        });
    }
    if a.len() != target.degree() {
        return Err(KernelError::LengthMismatch(a.len(), target.degree()));
    }
    let p = target.value();
    let coeffs = a.coeffs().iter().map(|&x| x % p).collect();
    Ok(ResiduePoly::from_parts(target.clone(), coeffs, l))
}

/// Copies the limb unchanged; the ISA's vector move.
pub fn vec_copy(a: &ResiduePoly) -> ResiduePoly {
    a.clone()
}
