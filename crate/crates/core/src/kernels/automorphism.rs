//! Ring automorphisms `X → X^g` and the lane-level data movement behind them.
//!
//! In the coefficient domain an automorphism is an index map plus a sign: the
//! coefficient of `X^i` moves to `X^{i·g mod 2n}` and picks up a minus sign when
//! that exponent wraps past `n`. In the NTT domain it is a pure permutation of
//! evaluation slots. On hardware that reads a polynomial as `n / lanes` rows of
//! `lanes` words, bit-reversed storage makes that permutation decompose into a
//! whole-row fetch order plus one lane permutation per row, so no element has
//! to cross rows.

use crate::poly::{Domain, KernelError, Order, ResiduePoly};
use crate::rns::bit_reverse;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

/// Galois element `5^s mod 2n` of a left rotation by `s` slots. Negative
/// steps rotate right.
pub fn galois_element(s: i64, n: usize) -> u64 {
    if n < 2 {
        return 1;
    }
    let two_n = 2 * n as u64;
    let order = (n / 2) as i64;
    let e = s.rem_euclid(order) as u64;
    crate::rns::pow_mod(5, e, two_n)
}

/// New position and sign of coefficient `i` under a rotation by `s`.
pub fn automorphism_map(i: usize, s: i64, n: usize) -> (usize, Sign) {
    galois_map(i, galois_element(s, n), n)
}

fn galois_map(i: usize, g: u64, n: usize) -> (usize, Sign) {
    let two_n = 2 * n as u64;
    let e = (i as u64 * g % two_n) as usize;
    if e >= n {
        (e - n, Sign::Minus)
    } else {
        (e, Sign::Plus)
    }
}

/// Applies `X → X^g` (`g` odd) to a coefficient-domain limb.
pub fn galois_apply(a: &ResiduePoly, g: u64) -> Result<ResiduePoly, KernelError> {
    let l = a.layout();
    if l.domain != Domain::Coeff || l.order != Order::Natural || l.scale_deferred {
        return Err(KernelError::WrongLayout {
            op: "automorphism_apply",
            expected: "coefficient domain, natural order".into(),
            found: l,
        });
    }
    let m = a.modulus();
    let n = a.len();
    let mut out = vec![0u64; n];
    for (i, &c) in a.coeffs().iter().enumerate() {
        let (j, sign) = galois_map(i, g, n);
        out[j] = match sign {
            Sign::Plus => c,
            Sign::Minus => m.neg(c),
        };
    }
    ResiduePoly::new(m.clone(), out, l)
}

/// Rotation automorphism in the coefficient domain; `s = 0` is the identity.
pub fn automorphism_apply(a: &ResiduePoly, s: i64) -> Result<ResiduePoly, KernelError> {
    galois_apply(a, galois_element(s, a.len()))
}

/// Data-movement plan of an NTT-domain automorphism on a `rows × lanes` view
/// of bit-reversed storage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutoPlan {
    pub n: usize,
    pub lanes: usize,
    /// Destination row `r` is filled from source row `src_row[r]`.
    pub src_row: Vec<usize>,
    /// Destination lane `c` of row `r` reads source lane `lane_perm[r][c]`.
    pub lane_perm: Vec<Vec<usize>>,
}

impl AutoPlan {
    pub fn new(n: usize, g: u64, lanes: usize) -> Result<Self, KernelError> {
        if !n.is_power_of_two() || !lanes.is_power_of_two() || lanes > n {
            return Err(KernelError::BadShape(lanes, n));
        }
        let rows = n / lanes;
        let (rb, lb) = (rows.trailing_zeros(), lanes.trailing_zeros());
        let two_n = 2 * n as u64;
        let two_r = 2 * rows as u64;
        let mut src_row = Vec::with_capacity(rows);
        let mut lane_perm = Vec::with_capacity(rows);
        for r in 0..rows {
            // storage (r, c) holds slot j = brv(c)·rows + brv(r)
            let jr = bit_reverse(r, rb) as u64;
            let o = g % two_n * (2 * jr + 1) % two_n;
            let jr_src = (o % two_r - 1) / 2;
            let carry = o / two_r;
            src_row.push(bit_reverse(jr_src as usize, rb));
            let perm = (0..lanes)
                .map(|c| {
                    let jl = bit_reverse(c, lb) as u64;
                    let jl_src = (g * jl + carry) % lanes as u64;
                    bit_reverse(jl_src as usize, lb)
                })
                .collect();
            lane_perm.push(perm);
        }
        Ok(AutoPlan {
            n,
            lanes,
            src_row,
            lane_perm,
        })
    }

    pub fn rows(&self) -> usize {
        self.n / self.lanes
    }

    pub fn apply(&self, data: &[u64]) -> Vec<u64> {
        let l = self.lanes;
        let mut out = vec![0u64; self.n];
        for (r, dst) in out.chunks_exact_mut(l).enumerate() {
            let src = &data[self.src_row[r] * l..(self.src_row[r] + 1) * l];
            for (c, d) in dst.iter_mut().enumerate() {
                *d = src[self.lane_perm[r][c]];
            }
        }
        out
    }
}

/// Lane width used by [`automorphism_ntt`].
pub const DEFAULT_AUTO_LANES: usize = 64;

/// Rotation automorphism on an NTT-domain, bit-reversed limb; equal to
/// transforming back, applying [`automorphism_apply`], and transforming again.
pub fn automorphism_ntt(a: &ResiduePoly, s: i64) -> Result<ResiduePoly, KernelError> {
    automorphism_ntt_lanes(a, s, DEFAULT_AUTO_LANES.min(a.len()))
}

pub fn automorphism_ntt_lanes(
    a: &ResiduePoly,
    s: i64,
    lanes: usize,
) -> Result<ResiduePoly, KernelError> {
    let l = a.layout();
    if l.domain != Domain::Ntt || l.order != Order::BitReversed || l.scale_deferred {
        return Err(KernelError::WrongLayout {
            op: "automorphism_ntt",
            expected: "ntt domain, bit-reversed order".into(),
            found: l,
        });
    }
    let n = a.len();
    let plan = AutoPlan::new(n, galois_element(s, n), lanes)?;
    ResiduePoly::new(a.modulus().clone(), plan.apply(a.coeffs()), l)
}

/// The fixed lane pattern used by [`transpose_fixed_network`]: lane `c` of the
/// output row reads lane `pattern[c]` of the fetched row.
pub fn transpose_pattern(lanes: usize) -> Vec<usize> {
    let b = lanes.trailing_zeros();
    (0..lanes).map(|c| bit_reverse(c, b)).collect()
}

/// Transposes bit-reversed storage.
///
/// `rows` is a `R × lanes` view of a length-`n` vector stored in bit-reversed
/// order. The natural-order data read as a `lanes × R` matrix `W` has transpose
/// `Wᵀ` of the same `R × lanes` shape as the input, and row `r` of `Wᵀ` is
/// stored row `brv(r)` passed through one fixed lane permutation. The result is
/// produced exactly that way: changed row fetch order, then the same network
/// on every row.
pub fn transpose_fixed_network(rows: &[Vec<u64>], lanes: usize) -> Result<Vec<Vec<u64>>, KernelError> {
    let r = rows.len();
    if !lanes.is_power_of_two() || !r.is_power_of_two() {
        return Err(KernelError::BadShape(lanes, r * lanes));
    }
    if let Some(bad) = rows.iter().find(|row| row.len() != lanes) {
        return Err(KernelError::LengthMismatch(bad.len(), lanes));
    }
    let pattern = transpose_pattern(lanes);
    let rb = r.trailing_zeros();
    Ok((0..r)
        .map(|i| {
            let src = &rows[bit_reverse(i, rb)];
            pattern.iter().map(|&c| src[c]).collect()
        })
        .collect())
}
