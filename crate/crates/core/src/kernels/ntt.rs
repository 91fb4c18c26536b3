//! Negacyclic number theoretic transform.
//!
//! The forward transform evaluates a polynomial at the odd powers of a
//! primitive `2n`-th root `ψ`: slot `j` holds `a(ψ^{2j+1})`, stored at index
//! `brv(j)`. Input is natural order, output is bit-reversed; the inverse takes
//! bit-reversed input back to natural order. Twiddles are read from
//! bit-reversed tables so neither direction permutes data.

use crate::poly::{Domain, KernelError, Layout, Order, ResiduePoly};
use crate::rns::{Modulus, MontgomeryForm};

/// Cooley–Tukey butterflies; natural in, bit-reversed out.
pub fn ntt_fwd_in_place(a: &mut [u64], m: &Modulus) {
    let n = a.len();
    debug_assert_eq!(n, m.degree());
    let tw = &m.tables().fwd;
    let mut t = n;
    let mut groups = 1;
    while groups < n {
        t >>= 1;
        for i in 0..groups {
            let w = tw[groups + i];
            let j1 = 2 * i * t;
            let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let u = *x;
                let v = m.mont_mul(*y, w);
                *x = m.add(u, v);
                *y = m.sub(u, v);
            }
        }
        groups <<= 1;
    }
}

/// Gentleman–Sande butterflies; bit-reversed in, natural out, without the
/// final `1/n` factor.
pub fn ntt_inv_in_place(a: &mut [u64], m: &Modulus) {
    let n = a.len();
    debug_assert_eq!(n, m.degree());
    let tw = &m.tables().inv;
    let mut t = 1;
    let mut groups = n;
    while groups > 1 {
        let h = groups >> 1;
        for i in 0..h {
            let w = tw[h + i];
            let j1 = 2 * i * t;
            let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let u = *x;
                let v = *y;
                *x = m.add(u, v);
                *y = m.mont_mul(m.sub(u, v), w);
            }
        }
        t <<= 1;
        groups = h;
    }
}

/// Forward transform. The Montgomery form of the data is preserved.
pub fn ntt_fwd(a: &ResiduePoly) -> Result<ResiduePoly, KernelError> {
    let l = a.layout();
    if l.domain != Domain::Coeff || l.order != Order::Natural || l.scale_deferred {
        return Err(KernelError::WrongLayout {
            op: "ntt_fwd",
            expected: "coefficient domain, natural order".into(),
            found: l,
        });
    }
    let mut c = a.coeffs().to_vec();
    ntt_fwd_in_place(&mut c, a.modulus());
    Ok(ResiduePoly::from_parts(
        a.modulus().clone(),
        c,
        Layout::ntt(l.repr),
    ))
}

/// Inverse transform. With `defer_scale` the final multiplication by `1/n`
/// is skipped and the result is tagged scale-deferred.
pub fn ntt_inv(a: &ResiduePoly, defer_scale: bool) -> Result<ResiduePoly, KernelError> {
    let l = a.layout();
    if l.domain != Domain::Ntt || l.order != Order::BitReversed || l.scale_deferred {
        return Err(KernelError::WrongLayout {
            op: "ntt_inv",
            expected: "ntt domain, bit-reversed order".into(),
            found: l,
        });
    }
    let m = a.modulus();
    let mut c = a.coeffs().to_vec();
    ntt_inv_in_place(&mut c, m);
    if !defer_scale {
        let n_inv = m.sm_encode(m.n_inv());
        for x in c.iter_mut() {
            *x = m.mont_mul(*x, n_inv);
        }
    }
    let mut out = Layout::coeff(l.repr);
    out.scale_deferred = defer_scale;
    Ok(ResiduePoly::from_parts(m.clone(), c, out))
}

/// Product in `Z_q[X]/(X^n + 1)` through the transform. Two NM operands give
/// an NM result (the second is re-encoded to SM first); otherwise the result
/// form follows the Montgomery composition rule.
pub fn negacyclic_mul(a: &ResiduePoly, b: &ResiduePoly) -> Result<ResiduePoly, KernelError> {
    if a.modulus() != b.modulus() {
        return Err(KernelError::ModulusMismatch(
            a.modulus().value(),
            b.modulus().value(),
        ));
    }
    let b = if a.repr() == MontgomeryForm::Nm && b.repr() == MontgomeryForm::Nm {
        b.to_form(MontgomeryForm::Sm)
    } else {
        b.clone()
    };
    let fa = ntt_fwd(a)?;
    let fb = ntt_fwd(&b)?;
    ntt_inv(&super::vec_mmul(&fa, &fb)?, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rns::{bit_reverse, make_modulus_chain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eval_oracle(a: &[u64], m: &Modulus) -> Vec<u64> {
        // slot j = a(ψ^{2j+1}), evaluated directly
        let n = a.len();
        (0..n)
            .map(|j| {
                let x = m.pow(m.omega(), 2 * j as u64 + 1);
                a.iter().rev().fold(0, |acc, &c| m.add(m.mul(acc, x), c))
            })
            .collect()
    }

    fn schoolbook(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0u128; n];
        let mut neg = vec![0u128; n];
        for i in 0..n {
            for j in 0..n {
                let p = a[i] as u128 * b[j] as u128 % q as u128;
                if i + j < n {
                    out[i + j] += p;
                } else {
                    neg[i + j - n] += p;
                }
            }
        }
        out.iter()
            .zip(&neg)
            .map(|(&p, &s)| ((p % q as u128 + q as u128 - s % q as u128) % q as u128) as u64)
            .collect()
    }

    #[test]
    fn tiny_transform_by_hand() {
        let m = Modulus::with_radix(5, 2, 3).unwrap();
        assert_eq!(m.omega(), 2);
        let a = ResiduePoly::from_coeffs(m.clone(), vec![1, 2]).unwrap();
        // a(2) = 5 ≡ 0, a(8) = 17 ≡ 2
        assert_eq!(ntt_fwd(&a).unwrap().coeffs(), &[0, 2]);
        let zero = ResiduePoly::from_coeffs(m, vec![0, 0]).unwrap();
        assert_eq!(ntt_fwd(&zero).unwrap().coeffs(), &[0, 0]);
    }

    #[test]
    fn forward_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 8, 64, 256] {
            for m in make_modulus_chain(n, 2, 50).unwrap() {
                let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..m.value())).collect();
                let p = ResiduePoly::from_coeffs(m.clone(), a.clone()).unwrap();
                let f = ntt_fwd(&p).unwrap();
                let ev = eval_oracle(&a, &m);
                let bits = n.trailing_zeros();
                for j in 0..n {
                    assert_eq!(f.coeffs()[bit_reverse(j, bits)], ev[j]);
                }
            }
        }
    }

    #[test]
    fn inverse_round_trip_and_deferred_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = make_modulus_chain(256, 1, 59).unwrap().remove(0);
        let a: Vec<u64> = (0..256).map(|_| rng.random_range(0..m.value())).collect();
        for form in [MontgomeryForm::Nm, MontgomeryForm::Sm] {
            let p = ResiduePoly::from_coeffs(m.clone(), a.clone()).unwrap().to_form(form);
            let f = ntt_fwd(&p).unwrap();
            assert_eq!(ntt_inv(&f, false).unwrap(), p);
            let d = ntt_inv(&f, true).unwrap();
            assert!(d.is_scale_deferred());
            for (x, y) in d.coeffs().iter().zip(p.coeffs()) {
                assert_eq!(*x, m.mul(*y, 256));
            }
            assert!(matches!(ntt_fwd(&d), Err(KernelError::WrongLayout { .. })));
            assert!(super::super::vec_madd(&d, &d).is_err());
        }
        let z = ResiduePoly::zero(m.clone(), Layout::ntt(MontgomeryForm::Sm));
        assert!(ntt_inv(&z, true).unwrap().coeffs().iter().all(|&c| c == 0));
        assert!(ntt_inv(&z, false).unwrap().coeffs().iter().all(|&c| c == 0));
        assert!(ntt_inv(&p_nat(&m), false).is_err());
    }

    fn p_nat(m: &Modulus) -> ResiduePoly {
        ResiduePoly::from_coeffs(m.clone(), vec![0; m.degree()]).unwrap()
    }

    #[test]
    fn negacyclic_examples() {
        let m = Modulus::with_radix(5, 2, 3).unwrap();
        let a = ResiduePoly::from_coeffs(m.clone(), vec![1, 2]).unwrap();
        let b = ResiduePoly::from_coeffs(m.clone(), vec![3, 0]).unwrap();
        assert_eq!(negacyclic_mul(&a, &b).unwrap().coeffs(), &[3, 1]);
        assert_eq!(schoolbook(&[1, 2], &[3, 0], 5), vec![3, 1]);

        let m = make_modulus_chain(16, 1, 40).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<u64> = (0..16).map(|_| rng.random_range(0..m.value())).collect();
        let pa = ResiduePoly::from_coeffs(m.clone(), a.clone()).unwrap();
        let mut unit = vec![0; 16];
        unit[0] = 1;
        let unit = ResiduePoly::from_coeffs(m.clone(), unit).unwrap();
        assert_eq!(negacyclic_mul(&pa, &unit).unwrap(), pa);
        let mut half = vec![0; 16];
        half[8] = 1;
        let half = ResiduePoly::from_coeffs(m.clone(), half).unwrap();
        let twice = negacyclic_mul(&negacyclic_mul(&pa, &half).unwrap(), &half).unwrap();
        let neg: Vec<u64> = a.iter().map(|&c| m.neg(c)).collect();
        assert_eq!(twice.coeffs(), &neg[..]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn transform_is_a_ring_homomorphism(seed in 0u64..1 << 32, logn in 3u32..9) {
            let n = 1usize << logn;
            let m = make_modulus_chain(n, 1, 59).unwrap().remove(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..m.value())).collect();
            let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..m.value())).collect();
            let pa = ResiduePoly::from_coeffs(m.clone(), a.clone()).unwrap();
            let pb = ResiduePoly::from_coeffs(m.clone(), b.clone()).unwrap();
            let sum = super::super::vec_madd(&pa, &pb).unwrap();
            let fa = ntt_fwd(&pa).unwrap();
            let fb = ntt_fwd(&pb).unwrap();
            proptest::prop_assert_eq!(ntt_fwd(&sum).unwrap(), super::super::vec_madd(&fa, &fb).unwrap());
            let prod = negacyclic_mul(&pa, &pb).unwrap();
            proptest::prop_assert_eq!(prod.coeffs(), &schoolbook(&a, &b, m.value())[..]);
        }
    }
}
