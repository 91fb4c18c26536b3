//! Flat little-endian serialization of ciphertexts and keys.
//!
//! ```text
//! offset  size  field
//!      0     8  magic ("EFCTCT01" ciphertext, "EFCTEK01" key)
//!      8     4  n (u32)
//!     12     4  level (u32)
//!     16     4  limb count k (u32)
//!     20     4  component count c (u32)
//!     24     8  scale (f64, 0 for keys)
//!     32   8·k  limb moduli (u64)
//!      …  8·c·k·n  words, component-major, then limb, then coefficient
//! ```
//!
//! Words are stored as held in memory: NTT domain, bit-reversed, SM form.

use super::{Ciphertext, CkksError, EvalKey};
use crate::poly::{Layout, ResiduePoly, RnsPoly};
use crate::rns::{BasisRole, Modulus, MontgomeryForm, RnsBasis};

pub const HEADER_LEN: usize = 32;
pub const CIPHERTEXT_MAGIC: [u8; 8] = *b"EFCTCT01";
pub const KEY_MAGIC: [u8; 8] = *b"EFCTEK01";

/// Decoded contents of a serialized file.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyFile {
    pub magic: [u8; 8],
    pub n: usize,
    pub level: u32,
    pub scale: f64,
    pub moduli: Vec<u64>,
    /// `[component][limb][coefficient]`
    pub words: Vec<Vec<Vec<u64>>>,
}

impl PolyFile {
    /// Rebuilds the components as NTT-domain SM polynomials.
    pub fn to_polys(&self) -> Result<Vec<RnsPoly>, CkksError> {
        let moduli = self
            .moduli
            .iter()
            .map(|&q| Modulus::new(q, self.n))
            .collect::<Result<Vec<_>, _>>()?;
        let basis = RnsBasis::new(moduli, BasisRole::Ciphertext)?;
        self.words
            .iter()
            .map(|comp| {
                let limbs = comp
                    .iter()
                    .zip(basis.moduli())
                    .map(|(w, m)| ResiduePoly::new(m.clone(), w.clone(), Layout::ntt(MontgomeryForm::Sm)))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(RnsPoly::new(basis.clone(), limbs)?)
            })
            .collect()
    }
}

/// Serializes polynomials sharing one basis.
pub fn write_polys(magic: [u8; 8], level: u32, scale: f64, polys: &[RnsPoly]) -> Result<Vec<u8>, CkksError> {
    let first = polys.first().ok_or_else(|| CkksError::Format("nothing to write".into()))?;
    if polys.iter().any(|p| p.basis() != first.basis()) {
        return Err(CkksError::Format("components on different bases".into()));
    }
    let n = first.limb(0).len();
    let k = first.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * k + 8 * polys.len() * k * n);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&level.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(polys.len() as u32).to_le_bytes());
    out.extend_from_slice(&scale.to_le_bytes());
    for m in first.basis().moduli() {
        out.extend_from_slice(&m.value().to_le_bytes());
    }
    for p in polys {
        for l in p.limbs() {
            for w in l.coeffs() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().expect("8 bytes"))
}

pub fn read_polys(bytes: &[u8]) -> Result<PolyFile, CkksError> {
    if bytes.len() < HEADER_LEN {
        return Err(CkksError::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let magic: [u8; 8] = bytes[..8].try_into().expect("8 bytes");
    let n = u32_at(bytes, 8) as usize;
    let level = u32_at(bytes, 12);
    let k = u32_at(bytes, 16) as usize;
    let c = u32_at(bytes, 20) as usize;
    let scale = f64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let need = HEADER_LEN + 8 * k + 8 * c * k * n;
    if bytes.len() != need {
        return Err(CkksError::Format(format!("expected {need} bytes, found {}", bytes.len())));
    }
    let moduli = (0..k).map(|i| u64_at(bytes, HEADER_LEN + 8 * i)).collect();
    let mut off = HEADER_LEN + 8 * k;
    let mut words = Vec::with_capacity(c);
    for _ in 0..c {
        let mut comp = Vec::with_capacity(k);
        for _ in 0..k {
            comp.push((0..n).map(|i| u64_at(bytes, off + 8 * i)).collect());
            off += 8 * n;
        }
        words.push(comp);
    }
    Ok(PolyFile {
        magic,
        n,
        level,
        scale,
        moduli,
        words,
    })
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CkksError> {
        write_polys(CIPHERTEXT_MAGIC, self.level() as u32, self.scale, &[self.c0.clone(), self.c1.clone()])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CkksError> {
        let f = read_polys(bytes)?;
        if f.magic != CIPHERTEXT_MAGIC || f.words.len() != 2 {
            return Err(CkksError::Format("not a ciphertext".into()));
        }
        let mut polys = f.to_polys()?.into_iter();
        let c0 = polys.next().expect("two components");
        let c1 = polys.next().expect("two components");
        Ok(Ciphertext { c0, c1, scale: f.scale })
    }
}

impl EvalKey {
    /// Components are written `b_0, a_0, b_1, a_1, …`.
    pub fn to_bytes(&self) -> Result<Vec<u8>, CkksError> {
        let polys: Vec<RnsPoly> = self
            .digits()
            .iter()
            .flat_map(|(b, a)| [b.clone(), a.clone()])
            .collect();
        write_polys(KEY_MAGIC, 0, 0.0, &polys)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CkksError> {
        let f = read_polys(bytes)?;
        if f.magic != KEY_MAGIC || f.words.len() % 2 != 0 {
            return Err(CkksError::Format("not an evaluation key".into()));
        }
        let polys = f.to_polys()?;
        let digits = polys.chunks(2).map(|p| (p[0].clone(), p[1].clone())).collect();
        Ok(EvalKey::from_digits(digits))
    }
}
