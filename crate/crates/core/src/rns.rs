//! Word-sized NTT-friendly primes and Montgomery arithmetic.
//!
//! Every modulus is a prime `q < 2^59` with `q ≡ 1 (mod 2n)`, so a primitive
//! `2n`-th root of unity exists and all intermediate products fit in `u128`.
//! Values are multiplied with Montgomery reduction against a radix `R = 2^k`.
//! Production moduli use `R = 2^64`; smaller radices are allowed so that small
//! examples can be checked by hand.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Largest supported modulus width in bits.
pub const MAX_MODULUS_BITS: u32 = 59;

/// Radix exponent used outside of tests.
pub const DEFAULT_RADIX_BITS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RnsError {
    #[error("ring degree {0} is not a power of two")]
    DegreeNotPowerOfTwo(usize),
    #[error("modulus width {0} exceeds the {MAX_MODULUS_BITS}-bit cap")]
    TooWide(u32),
    #[error("only {found} of {wanted} primes ≡ 1 mod {step} exist below 2^{bits}")]
    NotEnoughPrimes {
        wanted: usize,
        found: usize,
        step: u64,
        bits: u32,
    },
    #[error("{q} is not a prime congruent to 1 mod {step}")]
    NotNttFriendly { q: u64, step: u64 },
    #[error("Montgomery radix 2^{r_bits} must exceed q = {q} and be at most 2^64")]
    BadRadix { q: u64, r_bits: u32 },
    #[error("duplicate modulus {0} in basis")]
    DuplicateModulus(u64),
    #[error("basis mixes ring degrees {0} and {1}")]
    MixedDegree(usize, usize),
}

/// Montgomery representation tag of a word.
///
/// The tag records the power of `R` folded into a value: `NM` is `x`, `SM` is
/// `xR`, `DM` is `xR^2` (all mod q). A Montgomery product multiplies the two
/// values and divides by `R`, so exponents add and drop by one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MontgomeryForm {
    Nm,
    Sm,
    Dm,
}

impl MontgomeryForm {
    pub fn exponent(self) -> i32 {
        match self {
            MontgomeryForm::Nm => 0,
            MontgomeryForm::Sm => 1,
            MontgomeryForm::Dm => 2,
        }
    }

    pub fn from_exponent(e: i32) -> Option<Self> {
        match e {
            0 => Some(MontgomeryForm::Nm),
            1 => Some(MontgomeryForm::Sm),
            2 => Some(MontgomeryForm::Dm),
            _ => None,
        }
    }

    /// Tag of `mont_mul(a, b)` for operands tagged `self` and `other`, if it is
    /// one of the three representable forms.
    pub fn after_mul(self, other: MontgomeryForm) -> Option<MontgomeryForm> {
        Self::from_exponent(self.exponent() + other.exponent() - 1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MontgomeryForm::Nm => "nm",
            MontgomeryForm::Sm => "sm",
            MontgomeryForm::Dm => "dm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nm" => Some(MontgomeryForm::Nm),
            "sm" => Some(MontgomeryForm::Sm),
            "dm" => Some(MontgomeryForm::Dm),
            _ => None,
        }
    }
}

impl fmt::Display for MontgomeryForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub(crate) struct NttTables {
    /// `psi^{brv(i)}` in SM form, consumed by the forward butterflies.
    pub fwd: Vec<u64>,
    /// `psi^{-brv(i)}` in SM form, consumed by the inverse butterflies.
    pub inv: Vec<u64>,
}

/// An NTT-friendly prime with its Montgomery and twiddle constants.
#[derive(Clone)]
pub struct Modulus {
    q: u64,
    n: usize,
    r_bits: u32,
    mask: u64,
    q_inv_neg: u64,
    r1: u64,
    r2: u64,
    omega: u64,
    omega_inv: u64,
    n_inv: u64,
    tables: Arc<NttTables>,
}

impl PartialEq for Modulus {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q && self.n == other.n && self.r_bits == other.r_bits
    }
}

impl Eq for Modulus {}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Modulus")
            .field("q", &self.q)
            .field("n", &self.n)
            .field("r_bits", &self.r_bits)
            .field("omega", &self.omega)
            .finish()
    }
}

impl Modulus {
    /// Builds a production modulus with `R = 2^64`.
    pub fn new(q: u64, n: usize) -> Result<Self, RnsError> {
        Self::with_radix(q, n, DEFAULT_RADIX_BITS)
    }

    pub fn with_radix(q: u64, n: usize, r_bits: u32) -> Result<Self, RnsError> {
        if !n.is_power_of_two() {
            return Err(RnsError::DegreeNotPowerOfTwo(n));
        }
        let step = 2 * n as u64;
        if q >= 1 << MAX_MODULUS_BITS {
            return Err(RnsError::TooWide(64 - q.leading_zeros()));
        }
        if !is_prime(q) || q % step != 1 {
            return Err(RnsError::NotNttFriendly { q, step });
        }
        if r_bits > 64 || (r_bits < 64 && (1u64 << r_bits) <= q) {
            return Err(RnsError::BadRadix { q, r_bits });
        }
        let mask = if r_bits == 64 { u64::MAX } else { (1u64 << r_bits) - 1 };
        let q_inv = inv_mod_pow2(q);
        let q_inv_neg = q_inv.wrapping_neg() & mask;
        let r1 = ((1u128 << r_bits) % q as u128) as u64;
        let r2 = mul_mod(r1, r1, q);
        let omega = primitive_root_2n(q, n);
        let omega_inv = pow_mod(omega, q - 2, q);
        let n_inv = pow_mod(n as u64, q - 2, q);

        let mut m = Modulus {
            q,
            n,
            r_bits,
            mask,
            q_inv_neg,
            r1,
            r2,
            omega,
            omega_inv,
            n_inv,
            tables: Arc::new(NttTables {
                fwd: Vec::new(),
                inv: Vec::new(),
            }),
        };
        let log_n = n.trailing_zeros();
        let mut fwd = vec![0u64; n];
        let mut inv = vec![0u64; n];
        let mut pw = 1u64;
        let mut pw_inv = 1u64;
        for i in 0..n {
            let k = bit_reverse(i, log_n);
            fwd[k] = m.sm_encode(pw);
            inv[k] = m.sm_encode(pw_inv);
            pw = mul_mod(pw, omega, q);
            pw_inv = mul_mod(pw_inv, omega_inv, q);
        }
        m.tables = Arc::new(NttTables { fwd, inv });
        Ok(m)
    }

    pub fn value(&self) -> u64 {
        self.q
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn radix_bits(&self) -> u32 {
        self.r_bits
    }

    /// `-q^{-1} mod R`.
    pub fn q_inv_neg(&self) -> u64 {
        self.q_inv_neg
    }

    /// `R mod q`, the SM encoding of one.
    pub fn r_mod_q(&self) -> u64 {
        self.r1
    }

    /// `R^2 mod q`, the DM encoding of one.
    pub fn r2(&self) -> u64 {
        self.r2
    }

    /// Primitive `2n`-th root of unity.
    pub fn omega(&self) -> u64 {
        self.omega
    }

    pub fn omega_inv(&self) -> u64 {
        self.omega_inv
    }

    pub fn n_inv(&self) -> u64 {
        self.n_inv
    }

    pub(crate) fn tables(&self) -> &NttTables {
        &self.tables
    }

    /// Montgomery product `x·y·R^{-1} mod q`. Requires `x·y < q·R`, which holds
    /// for any pair of reduced words.
    #[inline(always)]
    pub fn mont_mul(&self, x: u64, y: u64) -> u64 {
        let t = x as u128 * y as u128;
        let m = (t as u64 & self.mask).wrapping_mul(self.q_inv_neg) & self.mask;
        let u = ((t + m as u128 * self.q as u128) >> self.r_bits) as u64;
        if u >= self.q {
            u - self.q
        } else {
            u
        }
    }

    #[inline(always)]
    pub fn add(&self, x: u64, y: u64) -> u64 {
        let s = x + y;
        if s >= self.q {
            s - self.q
        } else {
            s
        }
    }

    #[inline(always)]
    pub fn sub(&self, x: u64, y: u64) -> u64 {
        if x >= y {
            x - y
        } else {
            self.q - y + x
        }
    }

    #[inline(always)]
    pub fn neg(&self, x: u64) -> u64 {
        if x == 0 {
            0
        } else {
            self.q - x
        }
    }

    /// Plain modular product, independent of the Montgomery path.
    #[inline(always)]
    pub fn mul(&self, x: u64, y: u64) -> u64 {
        mul_mod(x, y, self.q)
    }

    pub fn pow(&self, x: u64, e: u64) -> u64 {
        pow_mod(x, e, self.q)
    }

    pub fn inv(&self, x: u64) -> u64 {
        pow_mod(x, self.q - 2, self.q)
    }

    /// `x → xR mod q`.
    #[inline(always)]
    pub fn sm_encode(&self, x: u64) -> u64 {
        self.mont_mul(x, self.r2)
    }

    /// `xR → x mod q`; inverse of [`Modulus::sm_encode`].
    #[inline(always)]
    pub fn sm_decode(&self, x: u64) -> u64 {
        self.mont_mul(x, 1)
    }

    /// `x → xR^2 mod q`.
    pub fn dm_encode(&self, x: u64) -> u64 {
        self.mont_mul(self.sm_encode(x), self.r2)
    }

    /// Encodes a plain residue into the given representation.
    pub fn encode(&self, x: u64, form: MontgomeryForm) -> u64 {
        match form {
            MontgomeryForm::Nm => x,
            MontgomeryForm::Sm => self.sm_encode(x),
            MontgomeryForm::Dm => self.dm_encode(x),
        }
    }

    /// Recovers the plain residue from a word in the given representation.
    pub fn decode(&self, x: u64, form: MontgomeryForm) -> u64 {
        match form {
            MontgomeryForm::Nm => x,
            MontgomeryForm::Sm => self.sm_decode(x),
            MontgomeryForm::Dm => self.sm_decode(self.sm_decode(x)),
        }
    }

    /// Reduces an arbitrary signed integer into `[0, q)`.
    pub fn reduce_i64(&self, x: i64) -> u64 {
        x.rem_euclid(self.q as i64) as u64
    }

    pub fn reduce_i128(&self, x: i128) -> u64 {
        x.rem_euclid(self.q as i128) as u64
    }
}

/// Montgomery product, free-function form.
pub fn mont_mul(x: u64, y: u64, m: &Modulus) -> u64 {
    m.mont_mul(x, y)
}

pub fn sm_encode(x: u64, m: &Modulus) -> u64 {
    m.sm_encode(x)
}

pub fn sm_decode(x: u64, m: &Modulus) -> u64 {
    m.sm_decode(x)
}

/// Which side of a key-switching pipeline a basis plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisRole {
    /// The ciphertext base `C = {q_0, …}`.
    Ciphertext,
    /// The extension base `B = {p_0, …}`.
    Extension,
}

/// An ordered set of pairwise-distinct moduli sharing one ring degree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsBasis {
    moduli: Vec<Modulus>,
    role: BasisRole,
}

impl RnsBasis {
    pub fn new(moduli: Vec<Modulus>, role: BasisRole) -> Result<Self, RnsError> {
        for (i, a) in moduli.iter().enumerate() {
            for b in &moduli[..i] {
                if a.value() == b.value() {
                    return Err(RnsError::DuplicateModulus(a.value()));
                }
                if a.degree() != b.degree() {
                    return Err(RnsError::MixedDegree(b.degree(), a.degree()));
                }
            }
        }
        Ok(RnsBasis { moduli, role })
    }

    pub fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub fn role(&self) -> BasisRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    pub fn contains(&self, q: u64) -> bool {
        self.moduli.iter().any(|m| m.value() == q)
    }

    /// First `k` moduli, same role.
    pub fn prefix(&self, k: usize) -> RnsBasis {
        RnsBasis {
            moduli: self.moduli[..k].to_vec(),
            role: self.role,
        }
    }

    /// Concatenation `self ∪ other`, keeping `self`'s role.
    pub fn union(&self, other: &RnsBasis) -> Result<RnsBasis, RnsError> {
        let mut moduli = self.moduli.clone();
        moduli.extend(other.moduli.iter().cloned());
        RnsBasis::new(moduli, self.role)
    }
}

/// Returns `count` distinct primes `≡ 1 mod 2n` below `2^bits`, found by a
/// downward search from `2^bits` and returned in ascending order.
pub fn make_modulus_chain(n: usize, count: usize, bits: u32) -> Result<Vec<Modulus>, RnsError> {
    make_modulus_chain_excluding(n, count, bits, &[])
}

/// Like [`make_modulus_chain`], skipping any prime listed in `exclude`.
pub fn make_modulus_chain_excluding(
    n: usize,
    count: usize,
    bits: u32,
    exclude: &[u64],
) -> Result<Vec<Modulus>, RnsError> {
    let primes = ntt_primes_below(n, count, bits, exclude)?;
    primes.into_iter().map(|q| Modulus::new(q, n)).collect()
}

/// Prime search behind [`make_modulus_chain`], without building tables.
pub fn ntt_primes_below(
    n: usize,
    count: usize,
    bits: u32,
    exclude: &[u64],
) -> Result<Vec<u64>, RnsError> {
    if !n.is_power_of_two() {
        return Err(RnsError::DegreeNotPowerOfTwo(n));
    }
    if bits > MAX_MODULUS_BITS {
        return Err(RnsError::TooWide(bits));
    }
    let step = 2 * n as u64;
    let mut found = Vec::with_capacity(count);
    if count > 0 && bits >= 2 {
        let top = 1u64 << bits;
        // largest k·2n + 1 strictly below 2^bits
        let mut c = ((top - 2) / step) * step + 1;
        while found.len() < count && c > step {
            if !exclude.contains(&c) && is_prime(c) {
                found.push(c);
            }
            c -= step;
        }
    }
    if found.len() < count {
        return Err(RnsError::NotEnoughPrimes {
            wanted: count,
            found: found.len(),
            step,
            bits,
        });
    }
    found.sort_unstable();
    Ok(found)
}

pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

pub fn pow_mod(mut base: u64, mut e: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller–Rabin for 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Inverse of an odd `q` modulo `2^64` by Newton iteration.
fn inv_mod_pow2(q: u64) -> u64 {
    let mut inv = 1u64;
    for _ in 0..6 {
        inv = inv.wrapping_mul(2u64.wrapping_sub(q.wrapping_mul(inv)));
    }
    inv
}

/// Smallest-generator primitive `2n`-th root of unity mod `q`.
fn primitive_root_2n(q: u64, n: usize) -> u64 {
    let exp = (q - 1) / (2 * n as u64);
    (2..q)
        .map(|g| pow_mod(g, exp, q))
        .find(|&w| pow_mod(w, n as u64, q) == q - 1)
        .expect("q ≡ 1 mod 2n guarantees a primitive 2n-th root")
}

/// Reverses the low `bits` bits of `i`.
pub fn bit_reverse(i: usize, bits: u32) -> usize {
    if bits == 0 {
        return 0;
    }
    i.reverse_bits() >> (usize::BITS - bits)
}
