//! DRAM image of residue polynomials and its `.emem` file format.
//!
//! DRAM is addressed in whole residue polynomials and divided into named
//! regions laid out back to back in declaration order. Each stored
//! polynomial keeps its modulus and layout tags so the executor can check
//! contracts on load.
//!
//! `.emem` layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     8  magic "EFCTMEM1"
//!      8     4  n
//!     12     4  modulus count m
//!     16     4  region count r
//!     20     4  reserved (0)
//!     24   8·m  modulus values
//!      …        r region headers: u16 name length, name bytes (UTF-8), u32 size
//!      …        for every polynomial of every region, in order:
//!                 8-byte descriptor
//!                   byte 0  present (0 or 1)
//!                   byte 1  domain (0 coefficient, 1 NTT)
//!                   byte 2  order (0 natural, 1 bit-reversed)
//!                   byte 3  form (0 NM, 1 SM, 2 DM)
//!                   byte 4  scale deferred (0 or 1)
//!                   byte 5  reserved
//!                   6..8    modulus index (u16)
//!                 then n u64 words if present
//! ```

use effact_core::{Domain, Modulus, MontgomeryForm, Order, ResiduePoly, RnsError};
use effact_core::poly::Layout;
use thiserror::Error;

use crate::ir::Program;

pub const MEM_MAGIC: [u8; 8] = *b"EFCTMEM1";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("unknown region `{0}`")]
    UnknownRegion(String),
    #[error("address {offset} outside region `{region}` of size {size}")]
    OutOfRange { region: String, offset: u64, size: u32 },
    #[error("region `{0}` already exists with a different size")]
    RegionConflict(String),
    #[error("polynomial modulus {0} is not part of this image")]
    ForeignModulus(u64),
    #[error("degree mismatch: image has n = {0}, polynomial has {1}")]
    Degree(usize, usize),
    #[error("program moduli {0:?} differ from image moduli {1:?}")]
    ModuliMismatch(Vec<u64>, Vec<u64>),
    #[error("malformed memory file: {0}")]
    Format(String),
    #[error(transparent)]
    Rns(#[from] RnsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub base: u64,
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryImage {
    n: usize,
    moduli: Vec<Modulus>,
    regions: Vec<Region>,
    dram: Vec<Option<ResiduePoly>>,
}

impl MemoryImage {
    pub fn new(n: usize, moduli: &[u64]) -> Result<Self, MemoryError> {
        let moduli = moduli
            .iter()
            .map(|&q| Modulus::new(q, n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MemoryImage {
            n,
            moduli,
            regions: Vec::new(),
            dram: Vec::new(),
        })
    }

    /// An empty image with every region the program declares.
    pub fn for_program(p: &Program) -> Result<Self, MemoryError> {
        let mut img = MemoryImage::new(p.n, &p.moduli)?;
        img.bind(p)?;
        Ok(img)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub fn modulus_values(&self) -> Vec<u64> {
        self.moduli.iter().map(Modulus::value).collect()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// Adds a region, or grows an existing one.
    pub fn ensure_region(&mut self, name: &str, size: u32) -> &Region {
        if let Some(i) = self.regions.iter().position(|r| r.name == name) {
            if self.regions[i].size < size {
                // Regions are contiguous; move a grown region to the end.
                let old = self.regions.remove(i);
                let mut moved: Vec<Option<ResiduePoly>> =
                    self.dram[old.base as usize..(old.base + old.size as u64) as usize].to_vec();
                moved.resize(size as usize, None);
                let base = self.dram.len() as u64;
                self.dram.extend(moved);
                for p in &mut self.dram[old.base as usize..(old.base + old.size as u64) as usize] {
                    *p = None;
                }
                self.regions.push(Region {
                    name: name.to_string(),
                    base,
                    size,
                });
                return self.regions.last().expect("just pushed");
            }
            return &self.regions[i];
        }
        let base = self.dram.len() as u64;
        self.dram.resize(self.dram.len() + size as usize, None);
        self.regions.push(Region {
            name: name.to_string(),
            base,
            size,
        });
        self.regions.last().expect("just pushed")
    }

    /// Checks the program's moduli and creates its regions.
    pub fn bind(&mut self, p: &Program) -> Result<(), MemoryError> {
        if !p.instrs.is_empty() && self.modulus_values() != p.moduli {
            return Err(MemoryError::ModuliMismatch(p.moduli.clone(), self.modulus_values()));
        }
        if !p.instrs.is_empty() && p.n != self.n {
            return Err(MemoryError::Degree(self.n, p.n));
        }
        for s in &p.symbols {
            self.ensure_region(&s.name, s.size);
        }
        Ok(())
    }

    fn index(&self, name: &str, offset: u64) -> Result<usize, MemoryError> {
        let r = self
            .region(name)
            .ok_or_else(|| MemoryError::UnknownRegion(name.to_string()))?;
        if offset >= r.size as u64 {
            return Err(MemoryError::OutOfRange {
                region: name.to_string(),
                offset,
                size: r.size,
            });
        }
        Ok((r.base + offset) as usize)
    }

    pub fn get(&self, name: &str, offset: u64) -> Result<Option<&ResiduePoly>, MemoryError> {
        Ok(self.dram[self.index(name, offset)?].as_ref())
    }

    pub fn set(&mut self, name: &str, offset: u64, poly: ResiduePoly) -> Result<(), MemoryError> {
        if poly.len() != self.n {
            return Err(MemoryError::Degree(self.n, poly.len()));
        }
        if !self.moduli.contains(poly.modulus()) {
            return Err(MemoryError::ForeignModulus(poly.modulus().value()));
        }
        let i = self.index(name, offset)?;
        self.dram[i] = Some(poly);
        Ok(())
    }

    pub(crate) fn get_abs(&self, i: usize) -> Option<&ResiduePoly> {
        self.dram.get(i).and_then(Option::as_ref)
    }

    pub(crate) fn set_abs(&mut self, i: usize, poly: ResiduePoly) {
        self.dram[i] = Some(poly);
    }

    /// Contents of the named regions, for comparing two runs.
    pub fn snapshot(&self, names: &[&str]) -> Vec<Option<ResiduePoly>> {
        let mut out = Vec::new();
        for name in names {
            if let Some(r) = self.region(name) {
                out.extend_from_slice(&self.dram[r.base as usize..(r.base + r.size as u64) as usize]);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MEM_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.moduli.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.regions.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for m in &self.moduli {
            out.extend_from_slice(&m.value().to_le_bytes());
        }
        for r in &self.regions {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&r.size.to_le_bytes());
        }
        for r in &self.regions {
            for k in 0..r.size as u64 {
                match &self.dram[(r.base + k) as usize] {
                    None => out.extend_from_slice(&[0u8; 8]),
                    Some(p) => {
                        let l = p.layout();
                        let idx = self
                            .moduli
                            .iter()
                            .position(|m| m == p.modulus())
                            .expect("set() only admits image moduli") as u16;
                        out.push(1);
                        out.push((l.domain == Domain::Ntt) as u8);
                        out.push((l.order == Order::BitReversed) as u8);
                        out.push(l.repr.exponent() as u8);
                        out.push(l.scale_deferred as u8);
                        out.push(0);
                        out.extend_from_slice(&idx.to_le_bytes());
                        for w in p.coeffs() {
                            out.extend_from_slice(&w.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, MemoryError> {
        let mut r = Reader { b, pos: 0 };
        if r.take(8)? != MEM_MAGIC {
            return Err(MemoryError::Format("bad magic".into()));
        }
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let nr = r.u32()? as usize;
        r.u32()?;
        let moduli = (0..m).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        let mut img = MemoryImage::new(n, &moduli)?;
        let mut sizes = Vec::with_capacity(nr);
        for _ in 0..nr {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| MemoryError::Format("region name is not UTF-8".into()))?;
            let size = r.u32()?;
            sizes.push((name, size));
        }
        for (name, size) in &sizes {
            img.ensure_region(name, *size);
        }
        for (name, size) in &sizes {
            for k in 0..*size as u64 {
                let d = r.take(8)?.to_vec();
                if d[0] == 0 {
                    continue;
                }
                let idx = u16::from_le_bytes([d[6], d[7]]) as usize;
                let modulus = img
                    .moduli
                    .get(idx)
                    .cloned()
                    .ok_or_else(|| MemoryError::Format(format!("modulus index {idx} out of range")))?;
                let layout = Layout {
                    domain: if d[1] == 1 { Domain::Ntt } else { Domain::Coeff },
                    order: if d[2] == 1 { Order::BitReversed } else { Order::Natural },
                    repr: MontgomeryForm::from_exponent(d[3] as i32)
                        .ok_or_else(|| MemoryError::Format(format!("bad form byte {}", d[3])))?,
                    scale_deferred: d[4] == 1,
                };
                let words = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
                let poly = ResiduePoly::new(modulus, words, layout)
                    .map_err(|e| MemoryError::Format(e.to_string()))?;
                img.set(name, k, poly)?;
            }
        }
        if r.pos != b.len() {
            return Err(MemoryError::Format(format!("{} trailing bytes", b.len() - r.pos)));
        }
        Ok(img)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], MemoryError> {
        if self.pos + k > self.b.len() {
            return Err(MemoryError::Format("truncated".into()));
        }
        let s = &self.b[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, MemoryError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, MemoryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, MemoryError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_and_file_round_trip() {
        let mut img = MemoryImage::new(8, &[17, 97]).unwrap();
        img.ensure_region("a", 2);
        img.ensure_region("b", 1);
        let m = img.moduli()[1].clone();
        let p = ResiduePoly::new(m, (0..8).collect(), Layout::ntt(MontgomeryForm::Sm)).unwrap();
        img.set("a", 1, p.clone()).unwrap();
        assert_eq!(img.get("a", 1).unwrap(), Some(&p));
        assert!(img.get("a", 2).is_err());
        assert!(img.get("c", 0).is_err());
        let back = MemoryImage::from_bytes(&img.to_bytes()).unwrap();
        assert_eq!(back, img);
        img.ensure_region("a", 4);
        assert_eq!(img.get("a", 1).unwrap(), Some(&p));
        assert_eq!(img.region("a").unwrap().size, 4);
        let foreign = ResiduePoly::from_coeffs(Modulus::new(113, 8).unwrap(), vec![0; 8]).unwrap();
        assert!(img.set("b", 0, foreign).is_err());
        assert!(MemoryImage::from_bytes(&img.to_bytes()[..30]).is_err());
    }
}
