//! Desk-scale RNS-CKKS.
//!
//! Ciphertexts are kept the way the accelerator keeps them: every limb in the
//! NTT domain, bit-reversed, SM form. Key switching is the hybrid variant with
//! `dnum` digits and `α = ⌈L/dnum⌉` special primes, built from the same
//! kernels a compiled program executes, so its output is the bit-exact
//! reference for compiled key-switch programs.
//!
//! Encoding, key generation and encryption exist to produce and check test
//! vectors; none of them are hardened.

mod encoding;
mod keys;
mod ops;
mod serialize;

use std::ops::Range;

use thiserror::Error;

use crate::kernels::BconvTables;
use crate::poly::KernelError;
use crate::rns::{ntt_primes_below, BasisRole, Modulus, RnsBasis, RnsError};

pub use encoding::{centered_coeffs, Encoder};
pub use keys::{keygen_small, normalize_step, EvalKey, KeySet, SecretKey};
pub use ops::{
    decrypt, decrypt_three, encrypt, encrypt_zero, hadd, hmult, hoisted_rotations, hrot,
    key_switch, key_switch_unmerged, mod_up_digit, rescale, tensor, Ciphertext, Plaintext,
};
pub use serialize::{read_polys, write_polys, PolyFile, HEADER_LEN};

#[derive(Debug, Error)]
pub enum CkksError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Rns(#[from] RnsError),
    #[error("unsupported parameters: {0}")]
    Unsupported(String),
    #[error("level mismatch: {0} vs {1}")]
    LevelMismatch(usize, usize),
    #[error("scale mismatch: {0} vs {1}")]
    ScaleMismatch(f64, f64),
    #[error("no level left to rescale")]
    LevelExhausted,
    #[error("no rotation key for step {0}")]
    MissingRotationKey(i64),
    #[error("malformed serialized data: {0}")]
    Format(String),
}

/// CKKS parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct CkksParams {
    pub n: usize,
    /// Number of ciphertext primes `L`.
    pub levels: usize,
    pub dnum: usize,
    pub q0_bits: u32,
    pub q_bits: u32,
    pub p_bits: u32,
    pub scale_bits: u32,
    pub sigma: f64,
}

impl CkksParams {
    /// Desk-scale defaults: 55-bit base prime, 40-bit rescaling primes and
    /// scale, 56-bit special primes.
    pub fn desk(n: usize, levels: usize, dnum: usize) -> Self {
        CkksParams {
            n,
            levels,
            dnum,
            q0_bits: 55,
            q_bits: 40,
            p_bits: 56,
            scale_bits: 40,
            sigma: 3.2,
        }
    }

    /// Special-prime count, also the maximal digit width.
    pub fn alpha(&self) -> usize {
        self.levels.div_ceil(self.dnum.max(1))
    }

    /// Prime values of the chain, `(q_0..q_{L-1}, p_0..p_{α-1})`, without
    /// building transform tables. Works beyond the executable size limits, so
    /// full-size parameter sets can be described.
    pub fn chain_values(&self) -> Result<(Vec<u64>, Vec<u64>), CkksError> {
        let n = self.n;
        let mut q = ntt_primes_below(n, 1, self.q0_bits, &[])?;
        let rest = ntt_primes_below(n, self.levels.saturating_sub(1), self.q_bits, &q)?;
        q.extend(rest);
        let p = ntt_primes_below(n, self.alpha(), self.p_bits, &q)?;
        Ok((q, p))
    }

    pub fn validate(&self) -> Result<(), CkksError> {
        let bad = |m: String| Err(CkksError::Unsupported(m));
        if !self.n.is_power_of_two() || self.n < 8 || self.n > 1 << 12 {
            return bad(format!("n = {} must be a power of two in [8, 4096]", self.n));
        }
        if self.levels == 0 || self.levels > 8 {
            return bad(format!("L = {} must be in [1, 8]", self.levels));
        }
        if self.dnum == 0 || self.dnum > self.levels {
            return bad(format!("dnum = {} must be in [1, L]", self.dnum));
        }
        if self.q_bits > 59 || self.q0_bits > 59 || self.p_bits > 59 || self.scale_bits >= self.q0_bits {
            return bad("prime widths must not exceed 59 bits and q0 must exceed the scale".into());
        }
        Ok(())
    }
}

/// Moduli and precomputed conversion tables for one parameter set.
#[derive(Clone, Debug)]
pub struct CkksContext {
    params: CkksParams,
    q: Vec<Modulus>,
    p: Vec<Modulus>,
    /// `[l - 1][d]`: digit `d` of an `l`-limb polynomial to the rest of `C_l ∪ B`.
    mod_up: Vec<Vec<BconvTables>>,
    /// `[l - 1]`: `B` to `C_l`.
    mod_down: Vec<BconvTables>,
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Self, CkksError> {
        params.validate()?;
        let n = params.n;
        let (qv, pv) = params.chain_values()?;
        let q = qv.iter().map(|&v| Modulus::new(v, n)).collect::<Result<Vec<_>, _>>()?;
        let p = pv.iter().map(|&v| Modulus::new(v, n)).collect::<Result<Vec<_>, _>>()?;
        let mut ctx = CkksContext {
            params,
            q,
            p,
            mod_up: Vec::new(),
            mod_down: Vec::new(),
        };
        for l in 1..=ctx.params.levels {
            let mut per_digit = Vec::new();
            for d in ctx.digits(l) {
                let src = ctx.basis_range(d.clone());
                per_digit.push(BconvTables::new(&src, &ctx.extension_target(l, d))?);
            }
            ctx.mod_up.push(per_digit);
            ctx.mod_down.push(BconvTables::new(&ctx.basis_p(), &ctx.basis_q(l))?);
        }
        Ok(ctx)
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn q_moduli(&self) -> &[Modulus] {
        &self.q
    }

    pub fn p_moduli(&self) -> &[Modulus] {
        &self.p
    }

    pub fn default_scale(&self) -> f64 {
        2f64.powi(self.params.scale_bits as i32)
    }

    /// `{q_0, …, q_{l-1}}`.
    pub fn basis_q(&self, l: usize) -> RnsBasis {
        RnsBasis::new(self.q[..l].to_vec(), BasisRole::Ciphertext).expect("distinct chain")
    }

    pub fn basis_range(&self, r: Range<usize>) -> RnsBasis {
        RnsBasis::new(self.q[r].to_vec(), BasisRole::Ciphertext).expect("distinct chain")
    }

    pub fn basis_p(&self) -> RnsBasis {
        RnsBasis::new(self.p.clone(), BasisRole::Extension).expect("distinct chain")
    }

    /// `C_l ∪ B`, ciphertext primes first.
    pub fn basis_qp(&self, l: usize) -> RnsBasis {
        let mut m = self.q[..l].to_vec();
        m.extend(self.p.iter().cloned());
        RnsBasis::new(m, BasisRole::Ciphertext).expect("distinct chain")
    }

    /// Full key basis `C_L ∪ B`.
    pub fn key_basis(&self) -> RnsBasis {
        self.basis_qp(self.params.levels)
    }

    /// Limb ranges of the digits of an `l`-limb polynomial.
    pub fn digits(&self, l: usize) -> Vec<Range<usize>> {
        let a = self.params.alpha();
        (0..l.div_ceil(a)).map(|d| d * a..((d + 1) * a).min(l)).collect()
    }

    /// Conversion target of digit `d`: the ciphertext primes of `C_l` outside
    /// the digit in index order, then the special primes.
    pub fn extension_target(&self, l: usize, d: Range<usize>) -> RnsBasis {
        let mut m: Vec<Modulus> = (0..l).filter(|i| !d.contains(i)).map(|i| self.q[i].clone()).collect();
        m.extend(self.p.iter().cloned());
        RnsBasis::new(m, BasisRole::Extension).expect("distinct chain")
    }

    pub fn mod_up_tables(&self, l: usize, d: usize) -> &BconvTables {
        &self.mod_up[l - 1][d]
    }

    pub fn mod_down_tables(&self, l: usize) -> &BconvTables {
        &self.mod_down[l - 1]
    }

    /// `P^{-1} mod q_i`.
    pub fn p_inv_mod_q(&self, i: usize) -> u64 {
        let m = &self.q[i];
        let p = self.p.iter().fold(1u64, |acc, pj| m.mul(acc, pj.value() % m.value()));
        m.inv(p)
    }

    /// `P mod q_i`.
    pub fn p_mod_q(&self, i: usize) -> u64 {
        let m = &self.q[i];
        self.p.iter().fold(1u64, |acc, pj| m.mul(acc, pj.value() % m.value()))
    }
}
