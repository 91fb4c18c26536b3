//! IR generators for the benchmark kernels, memory-image helpers, the
//! instruction-mix analyzer and randomized program corpora.

pub mod builder;
pub mod generators;
pub mod image;
pub mod mix;
pub mod random;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use effact_core::ckks::CkksError;

pub use generators::{gen_bootstrap_skeleton, gen_helr_iteration, gen_hoisted_rotations, gen_keyswitch, rotation_steps};
pub use mix::{inject_duplicates, instruction_mix, Category, InstructionMix};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ckks(#[from] CkksError),
}

/// Parameters shared by all generators. `levels` is `L` (ciphertext
/// primes), `limbs` is the active `l`, `slots` the packed message length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub n: usize,
    pub levels: usize,
    pub limbs: usize,
    pub dnum: usize,
    pub slots: usize,
    pub l_boot: usize,
    pub l_cts: usize,
    pub l_evalmod: usize,
    pub l_stc: usize,
    /// Rotations of the hoisted-rotation kernel and of the HELR
    /// rotate-and-sum.
    pub rotations: usize,
    /// Encrypted feature columns of the HELR iteration.
    pub features: usize,
}

impl WorkloadParams {
    /// Full-size bootstrapping parameters: N=2^16, L=24, dnum=4, a 15-level
    /// budget of 4 (CtS) + 8 (EvalMod) + 3 (StC).
    pub fn full_size() -> Self {
        WorkloadParams {
            n: 1 << 16,
            levels: 24,
            limbs: 24,
            dnum: 4,
            slots: 1 << 15,
            l_boot: 15,
            l_cts: 4,
            l_evalmod: 8,
            l_stc: 3,
            rotations: 4,
            features: 16,
        }
    }

    /// Small parameters that the golden executor runs in well under a
    /// second per kernel.
    pub fn desk(n: usize, levels: usize, dnum: usize) -> Self {
        WorkloadParams {
            n,
            levels,
            limbs: levels,
            dnum,
            slots: n / 2,
            l_boot: 6,
            l_cts: 2,
            l_evalmod: 3,
            l_stc: 1,
            rotations: 4,
            features: 16,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::Invalid(m));
        if !self.n.is_power_of_two() || self.n < 8 {
            return bad(format!("n = {} must be a power of two ≥ 8", self.n));
        }
        if self.levels == 0 || self.limbs == 0 || self.limbs > self.levels {
            return bad(format!("need 1 ≤ l ≤ L, got l = {}, L = {}", self.limbs, self.levels));
        }
        if self.dnum == 0 || self.dnum > self.levels {
            return bad(format!("dnum = {} must be in [1, L]", self.dnum));
        }
        if !self.slots.is_power_of_two() || self.slots > self.n / 2 {
            return bad(format!("slots = {} must be a power of two ≤ n/2", self.slots));
        }
        Ok(())
    }

    pub fn validate_boot(&self) -> Result<(), WorkloadError> {
        self.validate()?;
        if self.l_boot != self.l_cts + self.l_evalmod + self.l_stc {
            return Err(WorkloadError::Invalid(format!(
                "L_boot = {} but L_CtS + L_EvalMod + L_StC = {}",
                self.l_boot,
                self.l_cts + self.l_evalmod + self.l_stc
            )));
        }
        if self.l_cts == 0 || self.l_stc == 0 || self.l_evalmod == 0 {
            return Err(WorkloadError::Invalid("every bootstrapping phase needs a level".into()));
        }
        if self.l_boot + 1 > self.levels {
            return Err(WorkloadError::Invalid(format!(
                "L = {} leaves no level after a {}-level bootstrap",
                self.levels, self.l_boot
            )));
        }
        Ok(())
    }
}
