//! Fast RNS base conversion.
//!
//! For a source basis `C = {q_j}` with product `Q` and target basis
//! `B = {p_i}`, the conversion of `x` is
//!
//! ```text
//! out_i = Σ_j [x_j · q̂_j^{-1}]_{q_j} · q̂_j   (mod p_i),   q̂_j = Q / q_j
//! ```
//!
//! which equals `x + e·Q (mod p_i)` for some integer `0 ≤ e < |C|`. Both
//! entry points perform exactly the vector micro-ops a compiled program uses:
//! one multiply per source limb, then one multiply per (source, target) pair
//! accumulated over source limbs in ascending order.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::poly::{Domain, KernelError, Layout, ResiduePoly, RnsPoly, Scalar};
use crate::rns::{MontgomeryForm, RnsBasis};

/// Precomputed constants for converting from one basis to another.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BconvTables {
    src: RnsBasis,
    dst: RnsBasis,
    /// `q̂_j^{-1} mod q_j`
    qhat_inv: Vec<u64>,
    /// `q̂_j^{-1} · n^{-1} mod q_j`
    qhat_inv_n: Vec<u64>,
    /// `q̂_j mod p_i`, indexed `[i][j]`
    qhat_mod_p: Vec<Vec<u64>>,
}

impl BconvTables {
    pub fn new(src: &RnsBasis, dst: &RnsBasis) -> Result<Self, KernelError> {
        for p in dst.moduli() {
            if src.contains(p.value()) {
                return Err(KernelError::OverlappingBases(p.value()));
            }
        }
        if let (Some(a), Some(b)) = (src.moduli().first(), dst.moduli().first()) {
            if a.degree() != b.degree() {
                return Err(KernelError::LengthMismatch(a.degree(), b.degree()));
            }
        }
        let big_q: BigUint = src.moduli().iter().map(|m| BigUint::from(m.value())).product();
        let mut qhat_inv = Vec::with_capacity(src.len());
        let mut qhat_inv_n = Vec::with_capacity(src.len());
        let mut qhat_big = Vec::with_capacity(src.len());
        for m in src.moduli() {
            let q = m.value();
            let qhat = &big_q / q;
            let r = (&qhat % q).to_u64().expect("reduced below a u64 modulus");
            let inv = m.inv(r);
            assert_eq!(m.mul(inv, r), 1, "q̂ inverse check failed for {q}");
            qhat_inv.push(inv);
            qhat_inv_n.push(m.mul(inv, m.n_inv()));
            qhat_big.push(qhat);
        }
        let qhat_mod_p = dst
            .moduli()
            .iter()
            .map(|p| {
                qhat_big
                    .iter()
                    .map(|h| (h % p.value()).to_u64().expect("reduced below a u64 modulus"))
                    .collect()
            })
            .collect();
        Ok(BconvTables {
            src: src.clone(),
            dst: dst.clone(),
            qhat_inv,
            qhat_inv_n,
            qhat_mod_p,
        })
    }

    pub fn source(&self) -> &RnsBasis {
        &self.src
    }

    pub fn target(&self) -> &RnsBasis {
        &self.dst
    }

    /// Plain `q̂_j^{-1} mod q_j`.
    pub fn qhat_inv(&self, j: usize) -> u64 {
        self.qhat_inv[j]
    }

    /// Plain `q̂_j^{-1}·n^{-1} mod q_j`.
    pub fn qhat_inv_n(&self, j: usize) -> u64 {
        self.qhat_inv_n[j]
    }

    /// Plain `q̂_j mod p_i`.
    pub fn qhat_mod_p(&self, i: usize, j: usize) -> u64 {
        self.qhat_mod_p[i][j]
    }

    /// First-stage constant of the unmerged conversion (SM, so NM data stays NM).
    pub fn stage1(&self, j: usize) -> Scalar {
        Scalar::encode(self.qhat_inv[j], MontgomeryForm::Sm, &self.src.moduli()[j])
    }

    /// Second-stage constant of the unmerged conversion (SM, NM output).
    pub fn stage2(&self, i: usize, j: usize) -> Scalar {
        Scalar::encode(self.qhat_mod_p[i][j], MontgomeryForm::Sm, &self.dst.moduli()[i])
    }

    /// First-stage constant of the merged conversion: NM, so scale-deferred SM
    /// data lands in NM with `1/n` applied.
    pub fn merged_stage1(&self, j: usize) -> Scalar {
        Scalar::new(self.qhat_inv_n[j], MontgomeryForm::Nm)
    }

    /// Second-stage constant of the merged conversion: DM, so NM data lands in SM.
    pub fn merged_stage2(&self, i: usize, j: usize) -> Scalar {
        Scalar::encode(self.qhat_mod_p[i][j], MontgomeryForm::Dm, &self.dst.moduli()[i])
    }
}

/// `(MMUL, MMAD)` micro-op counts of one conversion from `c` to `b` limbs.
pub fn bconv_micro_op_count(c: usize, b: usize) -> (usize, usize) {
    (c + c * b, c.saturating_sub(1) * b)
}

fn run(
    a: &RnsPoly,
    tables: &BconvTables,
    stage1: impl Fn(&ResiduePoly, usize) -> Result<ResiduePoly, KernelError>,
    stage2: impl Fn(usize, usize) -> Scalar,
) -> Result<RnsPoly, KernelError> {
    if a.basis().moduli() != tables.src.moduli() {
        return Err(KernelError::BasisMismatch(
            "input basis differs from the conversion source".into(),
        ));
    }
    let t = a
        .limbs()
        .iter()
        .enumerate()
        .map(|(j, l)| stage1(l, j))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(tables.dst.len());
    for (i, p) in tables.dst.moduli().iter().enumerate() {
        let mut acc: Option<ResiduePoly> = None;
        for (j, tj) in t.iter().enumerate() {
            let lifted = super::lift(tj, p)?;
            let term = super::vec_mmul_scalar(&lifted, stage2(i, j))?;
            acc = Some(match acc {
                None => term,
                Some(s) => super::vec_madd(&s, &term)?,
            });
        }
        let layout = Layout::coeff(MontgomeryForm::Nm);
        out.push(acc.unwrap_or_else(|| ResiduePoly::zero(p.clone(), layout)));
    }
    RnsPoly::new(tables.dst.clone(), out)
}

fn check_input(op: &'static str, a: &RnsPoly, repr: MontgomeryForm, deferred: bool) -> Result<(), KernelError> {
    if let Some(l) = a.layout() {
        if l.domain != Domain::Coeff || l.repr != repr || l.scale_deferred != deferred {
            let mut expected = format!("coefficient-domain {repr} residues");
            if deferred {
                expected.push_str(" with deferred 1/n");
            }
            return Err(KernelError::WrongLayout {
                op,
                expected,
                found: l,
            });
        }
    }
    Ok(())
}

/// Plain conversion of coefficient-domain NM limbs; output is NM.
pub fn bconv(a: &RnsPoly, target: &RnsBasis) -> Result<RnsPoly, KernelError> {
    bconv_with(a, &BconvTables::new(a.basis(), target)?)
}

pub fn bconv_with(a: &RnsPoly, tables: &BconvTables) -> Result<RnsPoly, KernelError> {
    check_input("bconv", a, MontgomeryForm::Nm, false)?;
    run(
        a,
        tables,
        |l, j| super::vec_mmul_scalar(l, tables.stage1(j)),
        |i, j| tables.stage2(i, j),
    )
}

/// Conversion fused with the pending `1/n` of a deferred inverse NTT and the
/// SM→NM→SM round trip: takes scale-deferred SM limbs, returns SM limbs.
pub fn bconv_merged(a: &RnsPoly, tables: &BconvTables) -> Result<RnsPoly, KernelError> {
    check_input("bconv_merged", a, MontgomeryForm::Sm, true)?;
    run(
        a,
        tables,
        |l, j| super::vec_mmul_scalar_absorb(l, tables.merged_stage1(j)),
        |i, j| tables.merged_stage2(i, j),
    )
}

/// CRT reconstruction of coefficient `k` of an NM RNS polynomial, in `[0, Q)`.
pub fn crt_reconstruct(a: &RnsPoly, k: usize) -> BigUint {
    let big_q: BigUint = a.basis().moduli().iter().map(|m| BigUint::from(m.value())).product();
    let mut acc = BigUint::zero();
    for (limb, m) in a.limbs().iter().zip(a.basis().moduli()) {
        let q = m.value();
        let qhat = &big_q / q;
        let r = (&qhat % q).to_u64().unwrap_or(0);
        let inv = m.inv(r);
        let x = m.decode(limb.coeffs()[k], limb.repr());
        acc += qhat * BigUint::from(m.mul(x, inv));
    }
    if big_q.is_one() {
        return BigUint::zero();
    }
    acc % big_q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ntt_inv;
    use crate::rns::{make_modulus_chain_excluding, BasisRole, Modulus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(qs: &[u64], n: usize, role: BasisRole) -> RnsBasis {
        RnsBasis::new(qs.iter().map(|&q| Modulus::new(q, n).unwrap()).collect(), role).unwrap()
    }

    fn value_poly(b: &RnsBasis, v: &[u64]) -> RnsPoly {
        let limbs = b
            .moduli()
            .iter()
            .map(|m| ResiduePoly::from_coeffs(m.clone(), v.iter().map(|x| x % m.value()).collect()).unwrap())
            .collect();
        RnsPoly::new(b.clone(), limbs).unwrap()
    }

    #[test]
    fn small_examples() {
        // 5 and 7 share an NTT-friendly degree only at n = 1
        let c = basis(&[5, 7], 1, BasisRole::Ciphertext);
        let b = basis(&[11], 1, BasisRole::Extension);
        assert_eq!(bconv(&value_poly(&c, &[12]), &b).unwrap().limb(0).coeffs(), &[1]);
        assert_eq!(bconv(&value_poly(&c, &[1]), &b).unwrap().limb(0).coeffs(), &[3]);
        assert_eq!(bconv(&value_poly(&c, &[0]), &b).unwrap().limb(0).coeffs(), &[0]);
        let t = BconvTables::new(&c, &b).unwrap();
        assert_eq!((t.qhat_inv(0), t.qhat_inv(1)), (3, 3));
        assert_eq!((t.qhat_mod_p(0, 0), t.qhat_mod_p(0, 1)), (7, 5));
        assert_eq!(bconv_micro_op_count(2, 1), (4, 1));
    }

    #[test]
    fn overlapping_bases_rejected() {
        let c = basis(&[97, 113], 8, BasisRole::Ciphertext);
        let b = basis(&[113, 193], 8, BasisRole::Extension);
        assert!(matches!(BconvTables::new(&c, &b), Err(KernelError::OverlappingBases(113))));
    }

    #[test]
    fn overshoot_is_a_small_multiple_of_q() {
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cq = make_modulus_chain_excluding(n, 4, 40, &[]).unwrap();
        let excl: Vec<u64> = cq.iter().map(|m| m.value()).collect();
        let bq = make_modulus_chain_excluding(n, 3, 50, &excl).unwrap();
        let c = RnsBasis::new(cq, BasisRole::Ciphertext).unwrap();
        let b = RnsBasis::new(bq, BasisRole::Extension).unwrap();
        let limbs = c
            .moduli()
            .iter()
            .map(|m| {
                let v = (0..n).map(|_| rng.random_range(0..m.value())).collect();
                ResiduePoly::from_coeffs(m.clone(), v).unwrap()
            })
            .collect();
        let a = RnsPoly::new(c.clone(), limbs).unwrap();
        let out = bconv(&a, &b).unwrap();
        let big_q: BigUint = c.moduli().iter().map(|m| BigUint::from(m.value())).product();
        for k in 0..n {
            let x = crt_reconstruct(&a, k);
            let ok = (0..c.len() as u64).any(|e| {
                let v = &x + &big_q * e;
                b.moduli()
                    .iter()
                    .zip(out.limbs())
                    .all(|(p, l)| (&v % p.value()).to_u64().unwrap() == l.coeffs()[k])
            });
            assert!(ok, "coefficient {k}");
        }
    }

    #[test]
    fn merged_matches_unmerged_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, cw, bw) in [(1usize, vec![5u64, 7], vec![11u64]), (4, vec![17, 41], vec![73])] {
            let c = basis(&cw, n, BasisRole::Ciphertext);
            let b = basis(&bw, n, BasisRole::Extension);
            let t = BconvTables::new(&c, &b).unwrap();
            for _ in 0..20 {
                let limbs = c
                    .moduli()
                    .iter()
                    .map(|m| {
                        let v = (0..n).map(|_| rng.random_range(0..m.value())).collect();
                        ResiduePoly::new(m.clone(), v, Layout::ntt(MontgomeryForm::Sm)).unwrap()
                    })
                    .collect();
                let x = RnsPoly::new(c.clone(), limbs).unwrap();
                let deferred = x.map_limbs(|l| ntt_inv(l, true)).unwrap();
                let merged = bconv_merged(&deferred, &t).unwrap();
                let exact = x.map_limbs(|l| Ok(ntt_inv(l, false)?.to_form(MontgomeryForm::Nm))).unwrap();
                let oracle = bconv_with(&exact, &t)
                    .unwrap()
                    .map_limbs(|l| Ok(l.to_form(MontgomeryForm::Sm)))
                    .unwrap();
                assert_eq!(merged, oracle);
            }
        }
        let c = basis(&[17, 41], 4, BasisRole::Ciphertext);
        let b = basis(&[73], 4, BasisRole::Extension);
        let t = BconvTables::new(&c, &b).unwrap();
        let z = RnsPoly::zero(c.clone(), Layout::ntt(MontgomeryForm::Sm));
        let zd = z.map_limbs(|l| ntt_inv(l, true)).unwrap();
        assert!(bconv_merged(&zd, &t).unwrap().limb(0).coeffs().iter().all(|&v| v == 0));
        // non-deferred or NM input is a contract error
        let zn = z.map_limbs(|l| ntt_inv(l, false)).unwrap();
        assert!(matches!(bconv_merged(&zn, &t), Err(KernelError::WrongLayout { .. })));
    }
}
