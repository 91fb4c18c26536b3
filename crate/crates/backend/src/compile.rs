//! Compiler driver.
//!
//! IR → lower → propagate → PRE → peephole merge → DCE → explicit loads and
//! stores → schedule → streaming merge → SRAM allocation → streaming merge.
//! Every optimization can be switched off on its own; switching all of them
//! off still yields an executable program.

use serde::Serialize;
use thiserror::Error;

use crate::hw::{HardwareDescription, HwError};
use crate::ir::{dead_code_elim, Form, Program};
use crate::passes::alloc::{allocate, AllocError, AllocStats};
use crate::passes::lower::{lower, LowerError};
use crate::passes::memops::materialize;
use crate::passes::peephole::{peephole, PeepholeStats};
use crate::passes::pre::eliminate_redundancy;
use crate::passes::propagate::propagate;
use crate::passes::schedule::{schedule, ScheduleError};
use crate::passes::streaming::{merge_streaming, StreamStats};
use crate::text::{parse_program, ParseError};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("parse: {0}")]
    Parse(#[from] ParseError),
    #[error("lower: {0}")]
    Lower(#[from] LowerError),
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("alloc: {0}")]
    Alloc(#[from] AllocError),
    #[error("hw: {0}")]
    Hw(#[from] HwError),
    #[error("input: program is already in `{0}` form")]
    Form(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PassConfig {
    pub propagate: bool,
    pub pre: bool,
    pub peephole: bool,
    pub schedule: bool,
    pub alloc: bool,
    pub streaming: bool,
}

impl PassConfig {
    pub const NAMES: [&'static str; 6] = ["propagate", "pre", "peephole", "schedule", "alloc", "streaming"];

    pub fn all() -> Self {
        Self::from_mask(0b11_1111)
    }

    pub fn none() -> Self {
        Self::from_mask(0)
    }

    /// Bit k of `mask` enables pass `NAMES[k]`.
    pub fn from_mask(mask: u8) -> Self {
        let b = |k: u8| mask >> k & 1 == 1;
        PassConfig {
            propagate: b(0),
            pre: b(1),
            peephole: b(2),
            schedule: b(3),
            alloc: b(4),
            streaming: b(5),
        }
    }

    pub fn mask(&self) -> u8 {
        [self.propagate, self.pre, self.peephole, self.schedule, self.alloc, self.streaming]
            .iter()
            .enumerate()
            .map(|(k, &on)| (on as u8) << k)
            .sum()
    }
}

impl Default for PassConfig {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CompileStats {
    /// Vector instructions right after lowering.
    pub lowered: usize,
    pub propagated: usize,
    pub pre_removed: usize,
    pub peephole: PeepholeStats,
    pub dead: usize,
    /// Vector instructions after the machine-independent passes.
    pub optimized: usize,
    pub materialized: usize,
    pub loads_deduplicated: usize,
    pub makespan: Option<u64>,
    pub critical_path: Option<u64>,
    pub streaming: StreamStats,
    pub alloc: Option<AllocStats>,
    /// Instructions in the final program.
    pub emitted: usize,
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub program: Program,
    pub stats: CompileStats,
}

/// Lowering and the machine-independent passes. The result is ISA-level SSA
/// that still reads and writes DRAM inline.
pub fn optimize(ir: &Program, cfg: &PassConfig) -> Result<Compiled, CompileError> {
    let mut p = match ir.form {
        Form::Ir => lower(ir)?,
        f if f.is_physical() => return Err(CompileError::Form(f.as_str())),
        _ => ir.clone(),
    };
    let mut stats = CompileStats {
        lowered: p.vec_instrs().count(),
        ..Default::default()
    };
    if cfg.propagate {
        stats.propagated += propagate(&mut p);
    }
    if cfg.pre {
        stats.pre_removed += eliminate_redundancy(&mut p);
    }
    if cfg.peephole {
        stats.peephole = peephole(&mut p);
        // Folding exposes new identities and repeats.
        if cfg.propagate {
            stats.propagated += propagate(&mut p);
        }
        if cfg.pre {
            stats.pre_removed += eliminate_redundancy(&mut p);
        }
    }
    if cfg.propagate || cfg.pre || cfg.peephole {
        stats.dead = dead_code_elim(&mut p);
    }
    stats.optimized = p.vec_instrs().count();
    Ok(Compiled { program: p, stats })
}

pub fn compile(ir: &Program, hw: &HardwareDescription, cfg: &PassConfig) -> Result<Compiled, CompileError> {
    hw.validate()?;
    let Compiled { program: mut p, mut stats } = optimize(ir, cfg)?;
    stats.materialized = materialize(&mut p);
    if cfg.pre {
        stats.loads_deduplicated = eliminate_redundancy(&mut p);
    }
    if cfg.schedule {
        let info = schedule(&mut p, hw)?;
        stats.makespan = Some(info.makespan);
        stats.critical_path = Some(info.critical_path);
    }
    let streaming = cfg.streaming && hw.streaming;
    if streaming {
        stats.streaming.add(merge_streaming(&mut p, hw));
    }
    if cfg.alloc {
        stats.alloc = Some(allocate(&mut p, hw.sram_slots)?);
        if streaming {
            stats.streaming.add(merge_streaming(&mut p, hw));
        }
    }
    stats.emitted = p.instrs.len();
    Ok(Compiled { program: p, stats })
}

pub fn compile_text(text: &str, hw: &HardwareDescription, cfg: &PassConfig) -> Result<Compiled, CompileError> {
    compile(&parse_program(text)?, hw, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::print_program;

    const KS_LIKE: &str = "\
.form ir
.n 16
.modulus q0 97
.modulus q1 193
.modulus q2 257
.sym a 2
.sym e 2
.sym out 2
%x = load @a+0, q0
%y = load @a+1, q1
%xi = intt %x, q0
%yi = intt %y, q1
%x1 = mmul %xi, nm:1, q0
%y1 = mmul %yi, nm:1, q1
%z = bconv %x1, %y1 -> q2
%zn = ntt %z, q2
%u = mmul %zn, @e+0, q2
%v = mmul %zn, @e+1, q2
@out+0 = copy %u, q2
@out+1 = copy %v, q2
";

    #[test]
    fn mask_round_trips() {
        for m in 0..64 {
            assert_eq!(PassConfig::from_mask(m).mask(), m);
        }
        assert_eq!(PassConfig::default(), PassConfig::all());
    }

    #[test]
    fn deterministic_output() {
        let hw = HardwareDescription::default().with_slots(4);
        let a = compile_text(KS_LIKE, &hw, &PassConfig::all()).unwrap();
        let b = compile_text(KS_LIKE, &hw, &PassConfig::all()).unwrap();
        assert_eq!(print_program(&a.program), print_program(&b.program));
        assert_eq!(a.program.form, Form::Allocated);
        assert!(a.stats.peephole.removed() > 0);
    }

    #[test]
    fn stage_tagged_errors() {
        let hw = HardwareDescription::default();
        let e = compile_text(".form ir\n%a = frob %b\n", &hw, &PassConfig::all()).unwrap_err();
        assert!(e.to_string().starts_with("parse: "), "{e}");
        let e = compile_text(KS_LIKE, &hw.with_slots(1), &PassConfig::all()).unwrap_err();
        assert!(e.to_string().starts_with("hw: "), "{e}");
    }
}
