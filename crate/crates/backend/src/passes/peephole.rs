//! Computation-merge peephole rewrites.
//!
//! Four rewrites, applied in order:
//!
//! 1. **fold**: `mmul (mmul x, a), b` with a single-use inner product becomes
//!    `mmul x, a·b`. Forms combine as `e_a + e_b − 1`, so an NM conversion
//!    folds into the following SM constant.
//! 2. **defer**: an `intt` whose every consumer multiplies by a constant
//!    drops its `1/n` pass; each consumer takes `n⁻¹` into its constant and
//!    the `absorb` flag.
//! 3. **distribute**: `mmul` by a constant of a single-use `mmad` tree whose
//!    leaves are single-use constant products pushes the constant into the
//!    leaves. This turns the NM→SM conversion after base conversion into DM
//!    constants.
//! 4. **fuse**: `mmad acc, (mmul a, b)` with a single-use product becomes
//!    `mac acc, a, b`.

use std::collections::HashMap;

use effact_core::rns::{mul_mod, pow_mod};

use crate::ir::{Dst, Imm, Instr, Program, Reg, Src, VecInstr, VecOp};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct PeepholeStats {
    pub folded: usize,
    pub deferred: usize,
    pub distributed: usize,
    pub fused: usize,
}

impl PeepholeStats {
    /// Instructions removed.
    pub fn removed(&self) -> usize {
        self.folded + self.distributed + self.fused
    }
}

/// Product of two immediates as one immediate, if the form stays in range.
fn combine(a: Imm, b: Imm, q: u64) -> Option<Imm> {
    let form = a.form.after_mul(b.form)?;
    Some(Imm::new(mul_mod(a.value, b.value, q), form))
}

/// `mmul x, c` with a plain constant, no cross read and a register result.
fn const_product(ins: &Instr) -> Option<(&VecInstr, Imm)> {
    let v = ins.as_vec()?;
    if v.op != VecOp::Mmul || v.flags.cross || !matches!(v.dst, Dst::Reg(_)) {
        return None;
    }
    let c = v.imm()?;
    matches!(v.srcs[0], Src::Reg(_)).then_some((v, c))
}

struct Index {
    def: HashMap<Reg, usize>,
    uses: HashMap<Reg, usize>,
}

impl Index {
    fn build(p: &Program) -> Self {
        let mut def = HashMap::new();
        let mut uses: HashMap<Reg, usize> = HashMap::new();
        for (k, i) in p.instrs.iter().enumerate() {
            for r in i.defs() {
                def.insert(r, k);
            }
            for r in i.uses() {
                *uses.entry(r).or_insert(0) += 1;
            }
        }
        Index { def, uses }
    }

    fn single_use(&self, r: Reg) -> bool {
        self.uses.get(&r) == Some(&1)
    }
}

fn sweep(p: &mut Program, dead: &[bool]) {
    let mut k = 0;
    p.instrs.retain(|_| {
        k += 1;
        !dead[k - 1]
    });
}

fn fold(p: &mut Program) -> usize {
    let idx = Index::build(p);
    let mut dead = vec![false; p.instrs.len()];
    let mut count = 0;
    for k in 0..p.instrs.len() {
        let Some((outer, b)) = const_product(&p.instrs[k]) else { continue };
        if outer.flags.absorb {
            continue;
        }
        let Src::Reg(x) = outer.srcs[0] else { continue };
        let Some(&d) = idx.def.get(&x) else { continue };
        if dead[d] || !idx.single_use(x) {
            continue;
        }
        let inner = match p.instrs[d].as_vec() {
            Some(v) if v.op == VecOp::Mmul && v.modulus == outer.modulus && matches!(v.dst, Dst::Reg(_)) => v,
            _ => continue,
        };
        let Some(a) = inner.imm() else { continue };
        let q = p.moduli[outer.modulus as usize];
        let Some(c) = combine(a, b, q) else { continue };
        let mut merged = inner.clone();
        merged.dst = outer.dst;
        *merged.srcs.last_mut().expect("has imm") = Src::Imm(c);
        merged.flags.bconv |= outer.flags.bconv;
        p.instrs[k] = Instr::Vec(merged);
        dead[d] = true;
        count += 1;
    }
    sweep(p, &dead);
    count
}

fn defer(p: &mut Program) -> usize {
    let users = p.users();
    let mut count = 0;
    for k in 0..p.instrs.len() {
        let (d, m) = match p.instrs[k].as_vec() {
            Some(v) if v.op == VecOp::Intt && !v.flags.defer => match v.dst {
                Dst::Reg(r) => (r, v.modulus),
                Dst::Mem(_) => continue,
            },
            _ => continue,
        };
        let Some(us) = users.get(&d) else { continue };
        let ok = us.iter().all(|&u| {
            let ins = &p.instrs[u];
            matches!(const_product(ins), Some((v, _)) if v.modulus == m && !v.flags.absorb && v.srcs[0] == Src::Reg(d))
                && ins.uses().len() == 1
        });
        if !ok {
            continue;
        }
        let q = p.moduli[m as usize];
        let n_inv = pow_mod(p.n as u64 % q, q - 2, q);
        for &u in us {
            let v = p.instrs[u].as_vec_mut().expect("checked");
            let c = v.imm().expect("checked");
            *v.srcs.last_mut().expect("has imm") = Src::Imm(Imm::new(mul_mod(c.value, n_inv, q), c.form));
            v.flags.absorb = true;
        }
        p.instrs[k].as_vec_mut().expect("checked").flags.defer = true;
        count += 1;
    }
    count
}

/// Collects the leaves of a single-use `mmad` tree rooted at `r`; false if
/// some leaf is not a constant product.
fn tree_leaves(p: &Program, idx: &Index, r: Reg, m: u16, out: &mut Vec<usize>) -> bool {
    let Some(&d) = idx.def.get(&r) else { return false };
    let Some(v) = p.instrs[d].as_vec() else { return false };
    if v.modulus != m || !matches!(v.dst, Dst::Reg(_)) {
        return false;
    }
    match v.op {
        VecOp::Mmad if v.imm().is_none() => {
            v.srcs.iter().all(|s| match s {
                Src::Reg(x) => idx.single_use(*x) && tree_leaves(p, idx, *x, m, out),
                _ => false,
            })
        }
        VecOp::Mmul if v.imm().is_some() && !v.flags.absorb => {
            out.push(d);
            true
        }
        _ => false,
    }
}

fn distribute(p: &mut Program) -> usize {
    let idx = Index::build(p);
    let mut dead = vec![false; p.instrs.len()];
    let mut count = 0;
    for k in 0..p.instrs.len() {
        let Some((outer, b)) = const_product(&p.instrs[k]) else { continue };
        if outer.flags.absorb {
            continue;
        }
        let Src::Reg(x) = outer.srcs[0] else { continue };
        let m = outer.modulus;
        let root = match idx.def.get(&x) {
            Some(&d) if !dead[d] && idx.single_use(x) => d,
            _ => continue,
        };
        if !matches!(p.instrs[root].as_vec(), Some(v) if v.op == VecOp::Mmad) {
            continue;
        }
        let mut leaves = Vec::new();
        if !tree_leaves(p, &idx, x, m, &mut leaves) {
            continue;
        }
        let q = p.moduli[m as usize];
        let Some(new) = leaves
            .iter()
            .map(|&l| combine(p.instrs[l].as_vec().expect("leaf").imm().expect("leaf"), b, q))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let outer_dst = outer.dst;
        for (&l, c) in leaves.iter().zip(new) {
            let v = p.instrs[l].as_vec_mut().expect("leaf");
            *v.srcs.last_mut().expect("has imm") = Src::Imm(c);
        }
        // The tree root now yields the outer result directly.
        p.instrs[root].as_vec_mut().expect("root").dst = outer_dst;
        let moved = p.instrs[root].clone();
        p.instrs[k] = moved;
        dead[root] = true;
        count += 1;
    }
    sweep(p, &dead);
    count
}

fn fuse(p: &mut Program) -> usize {
    let idx = Index::build(p);
    let mut dead = vec![false; p.instrs.len()];
    let mut count = 0;
    for k in 0..p.instrs.len() {
        let v = match p.instrs[k].as_vec() {
            Some(v) if v.op == VecOp::Mmad && v.imm().is_none() => v.clone(),
            _ => continue,
        };
        let pick = (0..2).rev().find_map(|s| {
            let Src::Reg(r) = v.srcs[s] else { return None };
            let &d = idx.def.get(&r)?;
            let prod = p.instrs[d].as_vec()?;
            let ok = !dead[d]
                && idx.single_use(r)
                && prod.op == VecOp::Mmul
                && prod.modulus == v.modulus
                && !prod.flags.absorb
                && matches!(prod.dst, Dst::Reg(_))
                && v.srcs[1 - s] != Src::Reg(r);
            ok.then_some((s, d))
        });
        let Some((s, d)) = pick else { continue };
        let prod = p.instrs[d].as_vec().expect("checked").clone();
        let mut mac = VecInstr::new(
            VecOp::Mac,
            v.dst,
            vec![v.srcs[1 - s], prod.srcs[0], prod.srcs[1]],
            v.modulus,
        );
        mac.flags.cross = prod.flags.cross;
        mac.flags.bconv = prod.flags.bconv || v.flags.bconv;
        p.instrs[k] = Instr::Vec(mac);
        dead[d] = true;
        count += 1;
    }
    sweep(p, &dead);
    count
}

pub fn peephole(p: &mut Program) -> PeepholeStats {
    assert!(!p.form.is_physical(), "peephole rewrites run on SSA programs");
    let mut s = PeepholeStats::default();
    loop {
        let f = fold(p);
        s.folded += f;
        if f == 0 {
            break;
        }
    }
    s.deferred = defer(p);
    s.distributed = distribute(p);
    s.fused = fuse(p);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute;
    use crate::memory::MemoryImage;
    use crate::passes::lower::lower;
    use crate::text::parse_program;
    use effact_core::poly::Layout;
    use effact_core::{MontgomeryForm, ResiduePoly};

    const SRC: &str = "\
.n 16
.modulus q0 97
.modulus q1 193
.modulus q2 257
.sym x 2
.sym y 1
%a = load @x+0, q0
%b = load @x+1, q1
%ai = intt %a, q0
%bi = intt %b, q1
%an = mmul %ai, nm:1, q0
%bn = mmul %bi, nm:1, q1
%c = bconv %an, %bn -> q2
%cs = mmul %c, dm:1, q2
%cn = ntt %cs, q2
store %cn, @y+0, q2
";

    fn run(p: &Program) -> Option<ResiduePoly> {
        let mut img = MemoryImage::for_program(p).unwrap();
        for k in 0..2 {
            let m = img.moduli()[k].clone();
            let words = (0..16).map(|i| (i * 7 + 3 * k as u64 + 1) % m.value()).collect();
            img.set("x", k as u64, ResiduePoly::new(m, words, Layout::ntt(MontgomeryForm::Sm)).unwrap())
                .unwrap();
        }
        execute(p, &mut img).unwrap();
        img.get("y", 0).unwrap().cloned()
    }

    #[test]
    fn merge_audit_on_one_conversion() {
        let ir = parse_program(SRC).unwrap();
        let mut p = lower(&ir).unwrap();
        let before = p.instrs.len();
        let s = peephole(&mut p);
        // |C| = 2 conversions fold, |B| = 1 constant distributes, (|C|−1)|B| = 1 fuse.
        assert_eq!(s, PeepholeStats { folded: 2, deferred: 2, distributed: 1, fused: 1 });
        assert_eq!(before - p.instrs.len(), 4);
        assert_eq!(run(&p), run(&ir));
        let c = p.opcode_counts();
        assert_eq!(c[&VecOp::Mac], 1);
        assert!(p.vec_instrs().filter(|v| v.op == VecOp::Intt).all(|v| v.flags.defer));
    }

    #[test]
    fn shared_products_are_left_alone() {
        let text = ".form lowered\n.n 16\n.modulus q0 97\n.sym x 2\n%a = load @x+0, q0\n\
                    %p = mmul %a, %a, q0\n%s = mmad %p, %p, q0\nstore %s, @x+1, q0\n";
        let mut p = parse_program(text).unwrap();
        assert_eq!(peephole(&mut p), PeepholeStats::default());
    }
}
