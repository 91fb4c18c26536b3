//! Canonical-embedding encoder, `O(n^2)`, for producing and checking messages.

use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_traits::ToPrimitive;

use super::{CkksContext, CkksError};
use crate::kernels::ntt_fwd;
use crate::poly::{ResiduePoly, RnsPoly};
use crate::rns::MontgomeryForm;

use super::ops::Plaintext;

/// Maps `n/2` complex slots to real polynomials and back. Slot `j` is the
/// evaluation at `ζ^{5^j}` with `ζ = e^{iπ/n}`, so the automorphism
/// `X → X^5` rotates slots left by one.
#[derive(Clone, Debug)]
pub struct Encoder {
    n: usize,
    /// `ζ^t` for `t < 2n`
    roots: Vec<Complex64>,
    /// `5^j mod 2n` for `j < n/2`
    rot_group: Vec<usize>,
}

impl Encoder {
    pub fn new(n: usize) -> Self {
        let two_n = 2 * n;
        let roots = (0..two_n)
            .map(|t| Complex64::from_polar(1.0, std::f64::consts::PI * t as f64 / n as f64))
            .collect();
        let mut rot_group = Vec::with_capacity(n / 2);
        let mut g = 1usize;
        for _ in 0..n / 2 {
            rot_group.push(g);
            g = g * 5 % two_n;
        }
        Encoder { n, roots, rot_group }
    }

    pub fn slots(&self) -> usize {
        self.n / 2
    }

    /// Real coefficients `m_k = (2/n)·Re Σ_j z_j ζ_j^{-k}`, before scaling.
    pub fn embed_inverse(&self, values: &[Complex64]) -> Vec<f64> {
        let two_n = 2 * self.n;
        (0..self.n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, z) in values.iter().enumerate() {
                    let e = (two_n - self.rot_group[j] * k % two_n) % two_n;
                    acc += z * self.roots[e];
                }
                2.0 * acc.re / self.n as f64
            })
            .collect()
    }

    /// Slot values of a real polynomial.
    pub fn embed(&self, coeffs: &[f64]) -> Vec<Complex64> {
        let two_n = 2 * self.n;
        self.rot_group
            .iter()
            .map(|&g| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| self.roots[g * k % two_n] * c)
                    .sum()
            })
            .collect()
    }

    /// Encodes up to `n/2` slot values at `scale` on the first `limbs` primes.
    pub fn encode(
        &self,
        ctx: &CkksContext,
        values: &[Complex64],
        scale: f64,
        limbs: usize,
    ) -> Result<Plaintext, CkksError> {
        if values.len() > self.slots() {
            return Err(CkksError::Unsupported(format!(
                "{} values exceed {} slots",
                values.len(),
                self.slots()
            )));
        }
        let coeffs: Vec<i128> = self
            .embed_inverse(values)
            .iter()
            .map(|&c| (c * scale).round() as i128)
            .collect();
        let basis = ctx.basis_q(limbs);
        let parts = basis
            .moduli()
            .iter()
            .map(|m| {
                let v = coeffs.iter().map(|&c| m.reduce_i128(c)).collect();
                let p = ResiduePoly::from_coeffs(m.clone(), v)?.to_form(MontgomeryForm::Sm);
                ntt_fwd(&p)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Plaintext {
            poly: RnsPoly::new(basis, parts)?,
            scale,
        })
    }

    /// Decodes a coefficient-domain RNS polynomial (any form) at `scale`.
    pub fn decode(&self, poly: &RnsPoly, scale: f64) -> Vec<Complex64> {
        let coeffs: Vec<f64> = centered_coeffs(poly).iter().map(|c| c / scale).collect();
        self.embed(&coeffs)
    }
}

/// CRT-reconstructs each coefficient into `(-Q/2, Q/2]` as a float.
pub fn centered_coeffs(poly: &RnsPoly) -> Vec<f64> {
    let big_q: BigUint = poly
        .basis()
        .moduli()
        .iter()
        .map(|m| BigUint::from(m.value()))
        .product();
    let half = &big_q >> 1;
    let big_q = BigInt::from(big_q);
    (0..poly.limb(0).len())
        .map(|k| {
            let x = crate::kernels::crt_reconstruct(poly, k);
            let v = if x > half {
                BigInt::from(x) - &big_q
            } else {
                BigInt::from(x)
            };
            v.to_f64().unwrap_or(f64::NAN)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckks::CkksParams;
    use crate::kernels::ntt_inv;

    #[test]
    fn embedding_round_trip() {
        let enc = Encoder::new(32);
        let z: Vec<Complex64> = (0..16).map(|j| Complex64::new(j as f64 * 0.25 - 1.0, 0.5 - j as f64 * 0.03)).collect();
        let back = enc.embed(&enc.embed_inverse(&z));
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn encode_decode_through_rns() {
        let ctx = CkksContext::new(CkksParams::desk(64, 3, 3)).unwrap();
        let enc = Encoder::new(64);
        let z: Vec<Complex64> = (0..32).map(|j| Complex64::new((j as f64).sin(), (j as f64).cos())).collect();
        let pt = enc.encode(&ctx, &z, ctx.default_scale(), 3).unwrap();
        let coeff = pt.poly.map_limbs(|l| ntt_inv(l, false)).unwrap();
        let back = enc.decode(&coeff, pt.scale);
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
