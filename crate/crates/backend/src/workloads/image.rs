//! Filling memory images for generated programs.

use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use effact_core::ckks::EvalKey;
use effact_core::poly::Layout;
use effact_core::{MontgomeryForm, ResiduePoly, RnsBasis, RnsPoly};

use crate::ir::{Addr, Program};
use crate::memory::{MemoryError, MemoryImage};

/// Writes the limbs of `x` to `@name + base ..`.
pub fn bind_poly(img: &mut MemoryImage, name: &str, base: usize, x: &RnsPoly) -> Result<(), MemoryError> {
    for (i, limb) in x.limbs().iter().enumerate() {
        img.set(name, (base + i) as u64, limb.clone())?;
    }
    Ok(())
}

/// Writes an evaluation key to `@name_b` and `@name_a`, digit-major.
pub fn bind_key(img: &mut MemoryImage, name: &str, key: &EvalKey) -> Result<(), MemoryError> {
    for (d, (b, a)) in key.digits().iter().enumerate() {
        bind_poly(img, &format!("{name}_b"), d * b.len(), b)?;
        bind_poly(img, &format!("{name}_a"), d * a.len(), a)?;
    }
    Ok(())
}

/// Reads `basis.len()` limbs from `@name + base ..`.
pub fn read_poly(img: &MemoryImage, name: &str, base: usize, basis: &RnsBasis) -> Result<RnsPoly, MemoryError> {
    let limbs = (0..basis.len())
        .map(|i| {
            img.get(name, (base + i) as u64)?
                .cloned()
                .ok_or_else(|| MemoryError::Format(format!("@{name}+{} was never written", base + i)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    RnsPoly::new(basis.clone(), limbs).map_err(|e| MemoryError::Format(e.to_string()))
}

/// An image for `p` where every polynomial the program reads before writing
/// holds uniform NTT-domain SM data under the modulus of its first reader.
/// The data at an address depends only on `seed`, the symbol name and the
/// offset, so programs that differ in instruction order see the same inputs.
pub fn random_image(p: &Program, seed: u64) -> Result<MemoryImage, MemoryError> {
    let mut img = MemoryImage::for_program(p)?;
    let mut written: HashSet<Addr> = HashSet::new();
    for ins in &p.instrs {
        let Some(v) = ins.as_vec() else { continue };
        for a in ins.mem_reads() {
            if written.contains(&a) || a.index.is_some() {
                continue;
            }
            let name = p.symbols[a.sym as usize].name.clone();
            if img.get(&name, a.offset as u64)?.is_some() {
                continue;
            }
            let m = img.moduli()[v.modulus as usize].clone();
            let mut h = DefaultHasher::new();
            (seed, &name, a.offset).hash(&mut h);
            let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
            let c = (0..m.degree()).map(|_| rng.random_range(0..m.value())).collect();
            let poly = ResiduePoly::new(m, c, Layout::ntt(MontgomeryForm::Sm)).map_err(|e| MemoryError::Format(e.to_string()))?;
            img.set(&name, a.offset as u64, poly)?;
        }
        if let Some(a) = ins.mem_write() {
            written.insert(a);
        }
    }
    Ok(img)
}
