//! Secret keys and key-switching keys.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::{CkksContext, CkksError};
use crate::kernels::{galois_element, mac_fused, ntt_fwd, vec_mmul, vec_mmul_scalar, vec_neg};
use crate::poly::{Layout, ResiduePoly, RnsPoly, Scalar};
use crate::rns::{MontgomeryForm, RnsBasis};

/// Ternary secret, kept both as signed coefficients and transformed over the
/// full key basis.
#[derive(Clone, Debug)]
pub struct SecretKey {
    coeffs: Vec<i64>,
    ntt: RnsPoly,
}

impl SecretKey {
    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    /// The secret on the full key basis, NTT domain, SM form.
    pub fn ntt(&self) -> &RnsPoly {
        &self.ntt
    }

    /// The secret restricted to the first `l` ciphertext primes.
    pub fn on_q(&self, l: usize) -> RnsPoly {
        self.ntt.truncate(l)
    }
}

/// One key-switching key: per digit `d`, a pair `(b_d, a_d)` over `C_L ∪ B`
/// with `b_d = -a_d·s + e_d + P·g_d·s'`, where `g_d ≡ 1` on the primes of
/// digit `d` and `0` elsewhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalKey {
    digits: Vec<(RnsPoly, RnsPoly)>,
}

impl EvalKey {
    pub fn from_digits(digits: Vec<(RnsPoly, RnsPoly)>) -> Self {
        EvalKey { digits }
    }

    pub fn dnum(&self) -> usize {
        self.digits.len()
    }

    pub fn digit(&self, d: usize) -> (&RnsPoly, &RnsPoly) {
        let (b, a) = &self.digits[d];
        (b, a)
    }

    pub fn digits(&self) -> &[(RnsPoly, RnsPoly)] {
        &self.digits
    }
}

#[derive(Clone, Debug)]
pub struct KeySet {
    pub secret: SecretKey,
    /// Switches `s^2 → s`.
    pub relin: EvalKey,
    /// Switches `σ_s(s) → s`, keyed by normalized rotation step.
    pub rotation: BTreeMap<i64, EvalKey>,
}

impl KeySet {
    pub fn rotation_key(&self, step: i64, n: usize) -> Option<&EvalKey> {
        self.rotation.get(&normalize_step(step, n))
    }
}

/// Reduces a rotation step into `[0, n/2)`.
pub fn normalize_step(step: i64, n: usize) -> i64 {
    step.rem_euclid((n / 2).max(1) as i64)
}

pub(crate) fn uniform_poly(basis: &RnsBasis, rng: &mut ChaCha20Rng) -> RnsPoly {
    let limbs = basis
        .moduli()
        .iter()
        .map(|m| {
            let c = (0..m.degree()).map(|_| rng.random_range(0..m.value())).collect();
            ResiduePoly::new(m.clone(), c, Layout::ntt(MontgomeryForm::Sm)).expect("reduced")
        })
        .collect();
    RnsPoly::new(basis.clone(), limbs).expect("basis-shaped")
}

/// Signed coefficients into NTT-domain SM limbs.
pub(crate) fn signed_to_ntt(basis: &RnsBasis, coeffs: &[i64]) -> Result<RnsPoly, CkksError> {
    let p = RnsPoly::from_signed(basis.clone(), coeffs)?;
    Ok(p.map_limbs(|l| ntt_fwd(&l.to_form(MontgomeryForm::Sm)))?)
}

pub(crate) fn gaussian(n: usize, sigma: f64, rng: &mut ChaCha20Rng) -> Vec<i64> {
    let normal = Normal::new(0.0, sigma).expect("positive deviation");
    (0..n).map(|_| normal.sample(rng).round() as i64).collect()
}

fn ternary(n: usize, rng: &mut ChaCha20Rng) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(-1i64..=1)).collect()
}

/// Builds a key-switching key from `target` (the key being switched away
/// from, on the full key basis) to `s`.
fn switching_key(
    ctx: &CkksContext,
    s: &RnsPoly,
    target: &RnsPoly,
    rng: &mut ChaCha20Rng,
) -> Result<EvalKey, CkksError> {
    let basis = ctx.key_basis();
    let levels = ctx.params().levels;
    let mut digits = Vec::new();
    for range in ctx.digits(levels) {
        let a = uniform_poly(&basis, rng);
        let e = signed_to_ntt(&basis, &gaussian(ctx.n(), ctx.params().sigma, rng))?;
        let mut limbs = Vec::with_capacity(basis.len());
        for (i, m) in basis.moduli().iter().enumerate() {
            // -a·s + e
            let mut b = mac_fused(e.limb(i), &vec_neg(a.limb(i))?, s.limb(i))?;
            if range.contains(&i) {
                let pm = Scalar::encode(ctx.p_mod_q(i), MontgomeryForm::Sm, m);
                let t = vec_mmul_scalar(target.limb(i), pm)?;
                b = crate::kernels::vec_madd(&b, &t)?;
            }
            limbs.push(b);
        }
        digits.push((RnsPoly::new(basis.clone(), limbs)?, a));
    }
    Ok(EvalKey { digits })
}

/// Generates a ternary secret, the relinearization key and one rotation key
/// per requested step, deterministically from `seed`.
pub fn keygen_small(ctx: &CkksContext, seed: u64, rotations: &[i64]) -> Result<KeySet, CkksError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = ctx.n();
    let basis = ctx.key_basis();
    let coeffs = ternary(n, &mut rng);
    let s = signed_to_ntt(&basis, &coeffs)?;
    let s2 = s.zip_limbs(&s, vec_mmul)?;
    let relin = switching_key(ctx, &s, &s2, &mut rng)?;
    let mut rotation = BTreeMap::new();
    for &step in rotations {
        let step = normalize_step(step, n);
        if rotation.contains_key(&step) {
            continue;
        }
        let g = galois_element(step, n);
        let rotated: Vec<i64> = {
            let mut out = vec![0i64; n];
            for (i, &c) in coeffs.iter().enumerate() {
                let e = (i as u64 * g % (2 * n as u64)) as usize;
                if e >= n {
                    out[e - n] = -c;
                } else {
                    out[e] = c;
                }
            }
            out
        };
        let target = signed_to_ntt(&basis, &rotated)?;
        rotation.insert(step, switching_key(ctx, &s, &target, &mut rng)?);
    }
    Ok(KeySet {
        secret: SecretKey { coeffs, ntt: s },
        relin,
        rotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckks::CkksParams;

    #[test]
    fn keygen_is_deterministic_and_shaped() {
        let ctx = CkksContext::new(CkksParams::desk(64, 4, 2)).unwrap();
        let a = keygen_small(&ctx, 9, &[1, 3]).unwrap();
        let b = keygen_small(&ctx, 9, &[1, 3]).unwrap();
        assert_eq!(a.secret.coeffs(), b.secret.coeffs());
        assert_eq!(a.relin, b.relin);
        assert_eq!(a.relin.dnum(), 2);
        assert_eq!(a.relin.digit(0).0.len(), 6);
        assert!(a.secret.coeffs().iter().all(|c| (-1..=1).contains(c)));
        assert!(a.rotation_key(1, 64).is_some());
        assert!(a.rotation_key(33, 64).is_some());
        assert!(a.rotation_key(2, 64).is_none());
        let c = keygen_small(&ctx, 10, &[]).unwrap();
        assert_ne!(a.secret.coeffs(), c.secret.coeffs());
    }
}
