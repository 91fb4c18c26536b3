//! Instruction-mix histogram and the duplicate-injection harness.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ir::{Dst, Instr, Program, Reg, Src, VecOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Category {
    #[serde(rename = "MULT")]
    Mult,
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "BC_MULT")]
    BcMult,
    #[serde(rename = "BC_ADD")]
    BcAdd,
    #[serde(rename = "NTT")]
    Ntt,
    #[serde(rename = "AUTO")]
    Auto,
    #[serde(rename = "LOAD/STORE")]
    LoadStore,
    #[serde(rename = "OTHERS")]
    Others,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Mult,
        Category::Add,
        Category::BcMult,
        Category::BcAdd,
        Category::Ntt,
        Category::Auto,
        Category::LoadStore,
        Category::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Mult => "MULT",
            Category::Add => "ADD",
            Category::BcMult => "BC_MULT",
            Category::BcAdd => "BC_ADD",
            Category::Ntt => "NTT",
            Category::Auto => "AUTO",
            Category::LoadStore => "LOAD/STORE",
            Category::Others => "OTHERS",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InstructionMix {
    pub counts: BTreeMap<Category, usize>,
    pub total: usize,
}

impl InstructionMix {
    pub fn count(&self, c: Category) -> usize {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn fraction(&self, c: Category) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(c) as f64 / self.total as f64
        }
    }

    /// MULT + ADD including the base-conversion ones.
    pub fn arithmetic_fraction(&self) -> f64 {
        [Category::Mult, Category::Add, Category::BcMult, Category::BcAdd]
            .iter()
            .map(|&c| self.fraction(c))
            .sum()
    }

    fn bump(&mut self, c: Category, k: usize) {
        if k > 0 {
            *self.counts.entry(c).or_default() += k;
            self.total += k;
        }
    }
}

/// Histogram over vector instructions. A `mac` counts as a multiply; an IR
/// `bconv` counts as the micro-ops lowering expands it into. Inline DRAM
/// operands are not separate instructions; only explicit `load`/`store` are.
pub fn instruction_mix(p: &Program) -> InstructionMix {
    let mut m = InstructionMix::default();
    for ins in &p.instrs {
        match ins {
            Instr::Vec(v) => {
                let bc = v.flags.bconv;
                let c = match v.op {
                    VecOp::Mmul | VecOp::Mac if bc => Category::BcMult,
                    VecOp::Mmul | VecOp::Mac => Category::Mult,
                    VecOp::Mmad if bc => Category::BcAdd,
                    VecOp::Mmad => Category::Add,
                    VecOp::Ntt | VecOp::Intt => Category::Ntt,
                    VecOp::Auto => Category::Auto,
                    VecOp::Load | VecOp::Store => Category::LoadStore,
                    VecOp::Copy => Category::Others,
                };
                m.bump(c, 1);
            }
            Instr::Bconv(b) => {
                let (c, t) = (b.srcs.len(), b.targets.len());
                m.bump(Category::BcMult, c + t * c);
                m.bump(Category::BcAdd, t * (c - 1));
            }
            Instr::Scalar(_) => {}
        }
    }
    m
}

/// `(fusable, normal)`: multiplies outside base conversion whose only reader
/// is an add that can absorb them into a MAC, and all multiplies outside
/// base conversion. Each add absorbs at most one product.
pub fn mac_fusable(p: &Program) -> (usize, usize) {
    let users = p.users();
    let mut producer: HashMap<Reg, usize> = HashMap::new();
    let mut normal = 0;
    for (k, ins) in p.instrs.iter().enumerate() {
        if let Some(v) = ins.as_vec() {
            if v.op == VecOp::Mmul && !v.flags.bconv {
                normal += 1;
                if let Dst::Reg(r) = v.dst {
                    producer.insert(r, k);
                }
            }
        }
    }
    let mut fusable = 0;
    for ins in &p.instrs {
        let Some(v) = ins.as_vec() else { continue };
        if v.op != VecOp::Mmad || v.flags.bconv {
            continue;
        }
        let single = |s: &Src| match s {
            Src::Reg(r) => producer.contains_key(r) && users.get(r).is_some_and(|u| u.len() == 1),
            _ => false,
        };
        if v.srcs.iter().any(single) {
            fusable += 1;
        }
    }
    (fusable, normal)
}

/// Duplicates `fraction` of the pure register-to-register instructions of an
/// SSA program. Each copy gets a fresh destination, is placed at a random
/// point before the original's first reader, and takes over every other
/// reader of the original so that both stay live. Returns the program and
/// the number of copies.
pub fn inject_duplicates(p: &Program, fraction: f64, seed: u64) -> (Program, usize) {
    let users = p.users();
    let candidates: Vec<usize> = p
        .instrs
        .iter()
        .enumerate()
        .filter(|(_, i)| match i.as_vec() {
            Some(v) => {
                !matches!(v.op, VecOp::Load | VecOp::Store)
                    && matches!(v.dst, Dst::Reg(Reg::Virt(_)))
                    && v.srcs.iter().all(|s| !matches!(s, Src::Mem(_)))
                    && users.contains_key(&v.dst.reg().expect("register destination"))
            }
            None => false,
        })
        .map(|(k, _)| k)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let want = ((candidates.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut chosen: Vec<usize> = sample(&mut rng, candidates.len(), want).into_iter().map(|i| candidates[i]).collect();
    chosen.sort_unstable();

    let mut next = p.next_vreg();
    // Copies to insert after a given position, and reader rewrites.
    let mut after: BTreeMap<usize, Vec<Instr>> = BTreeMap::new();
    let mut rewrite: HashMap<usize, Vec<(Reg, Reg)>> = HashMap::new();
    for &k in &chosen {
        let v = p.instrs[k].as_vec().expect("candidate").clone();
        let orig = v.dst.reg().expect("candidate");
        let readers = &users[&orig];
        let first = readers[0];
        let at = rng.random_range(k..first);
        let dup = Reg::Virt(next);
        next += 1;
        let mut c = v;
        c.dst = Dst::Reg(dup);
        after.entry(at).or_default().push(Instr::Vec(c));
        let take: Vec<usize> = if readers.len() == 1 {
            readers.clone()
        } else {
            readers.iter().copied().skip(1).step_by(2).collect()
        };
        for r in take {
            rewrite.entry(r).or_default().push((orig, dup));
        }
    }
    let mut out = Program {
        instrs: Vec::with_capacity(p.instrs.len() + chosen.len()),
        ..p.clone()
    };
    for (k, ins) in p.instrs.iter().enumerate() {
        let mut ins = ins.clone();
        if let Some(rs) = rewrite.get(&k) {
            ins.rewrite_uses(|r| rs.iter().find(|(o, _)| *o == r).map_or(r, |&(_, d)| d));
        }
        out.instrs.push(ins);
        if let Some(extra) = after.remove(&k) {
            out.instrs.extend(extra);
        }
    }
    (out, chosen.len())
}
