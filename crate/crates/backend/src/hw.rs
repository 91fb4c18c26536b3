//! Hardware description.
//!
//! Read from a TOML file. Every field has a default, so a file only needs
//! the keys it changes:
//!
//! ```toml
//! lanes = 64
//! sram_slots = 32
//! streaming = false
//!
//! [units]
//! ntt = 1
//! ```
//!
//! Latencies are derived from the ring degree of the program being run
//! unless overridden in `[latency]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Flags, VecOp};

#[derive(Debug, Error)]
pub enum HwError {
    #[error("invalid hardware description: {0}")]
    Invalid(String),
    #[error("cannot parse hardware description: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read hardware description: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Units {
    pub ntt: u32,
    pub mmul: u32,
    pub madd: u32,
    pub auto: u32,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            ntt: 2,
            mmul: 4,
            madd: 4,
            auto: 1,
        }
    }
}

/// Per-opcode occupancy overrides in cycles.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyOverrides {
    pub mmul: Option<u64>,
    pub mmad: Option<u64>,
    pub mac: Option<u64>,
    pub ntt: Option<u64>,
    pub intt: Option<u64>,
    pub auto: Option<u64>,
    pub copy: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareDescription {
    /// Words processed per cycle by a vector unit.
    pub lanes: u32,
    /// On-chip SRAM capacity in residue polynomials.
    pub sram_slots: u32,
    pub sram_banks: u32,
    pub dram_bytes_per_cycle: f64,
    /// Fixed latency of every DRAM transfer.
    pub dram_latency: u64,
    /// Residue polynomials the streaming FIFO space holds at once.
    pub fifo_depth: u32,
    pub streaming: bool,
    /// Out-of-order issue window in instructions.
    pub window: u32,
    /// Whether MAC may run on an idle NTT unit.
    pub mac_on_ntt: bool,
    /// Butterfly pipelines inside one fine-grained NTT unit.
    pub ntt_pipelines: u32,
    /// Cycles from the last input word to the last output word.
    pub pipeline_depth: u64,
    pub units: Units,
    pub latency: LatencyOverrides,
}

impl Default for HardwareDescription {
    fn default() -> Self {
        HardwareDescription {
            lanes: 64,
            sram_slots: 64,
            sram_banks: 8,
            dram_bytes_per_cycle: 64.0,
            dram_latency: 100,
            fifo_depth: 16,
            streaming: true,
            window: 64,
            mac_on_ntt: true,
            ntt_pipelines: 1,
            pipeline_depth: 8,
            units: Units::default(),
            latency: LatencyOverrides::default(),
        }
    }
}

/// Function-unit classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Ntt,
    Mmul,
    Madd,
    Auto,
    /// Load, store and copy move data; they occupy no arithmetic unit.
    Move,
}

impl Unit {
    pub const ARITH: [Unit; 4] = [Unit::Ntt, Unit::Mmul, Unit::Madd, Unit::Auto];

    pub fn of(op: VecOp) -> Unit {
        match op {
            VecOp::Ntt | VecOp::Intt => Unit::Ntt,
            VecOp::Mmul | VecOp::Mac => Unit::Mmul,
            VecOp::Mmad => Unit::Madd,
            VecOp::Auto => Unit::Auto,
            VecOp::Load | VecOp::Store | VecOp::Copy => Unit::Move,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Ntt => "ntt",
            Unit::Mmul => "mmul",
            Unit::Madd => "madd",
            Unit::Auto => "auto",
            Unit::Move => "move",
        }
    }
}

impl HardwareDescription {
    pub fn from_toml_str(s: &str) -> Result<Self, HwError> {
        let hw: HardwareDescription = toml::from_str(s)?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn load(path: &Path) -> Result<Self, HwError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    pub fn with_slots(&self, slots: u32) -> Self {
        HardwareDescription {
            sram_slots: slots,
            ..self.clone()
        }
    }

    pub fn with_streaming(&self, on: bool) -> Self {
        HardwareDescription {
            streaming: on,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HwError> {
        let counts = [
            ("lanes", self.lanes),
            ("sram_banks", self.sram_banks),
            ("fifo_depth", self.fifo_depth),
            ("window", self.window),
            ("ntt_pipelines", self.ntt_pipelines),
            ("units.ntt", self.units.ntt),
            ("units.mmul", self.units.mmul),
            ("units.madd", self.units.madd),
            ("units.auto", self.units.auto),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(HwError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.sram_slots < 2 {
            return Err(HwError::Invalid(format!(
                "sram_slots must be at least 2, found {}",
                self.sram_slots
            )));
        }
        if !(self.dram_bytes_per_cycle.is_finite() && self.dram_bytes_per_cycle > 0.0) {
            return Err(HwError::Invalid("dram_bytes_per_cycle must be positive".into()));
        }
        Ok(())
    }

    pub fn units_of(&self, u: Unit) -> u32 {
        match u {
            Unit::Ntt => self.units.ntt,
            Unit::Mmul => self.units.mmul,
            Unit::Madd => self.units.madd,
            Unit::Auto => self.units.auto,
            Unit::Move => u32::MAX,
        }
    }

    /// Cycles to stream one residue polynomial through a vector unit.
    pub fn pass_cycles(&self, n: usize) -> u64 {
        (n as u64).div_ceil(self.lanes as u64).max(1)
    }

    /// Cycles a unit is occupied by one instruction.
    pub fn occupancy(&self, op: VecOp, flags: Flags, n: usize) -> u64 {
        let pass = self.pass_cycles(n);
        let log_n = (n.max(2) as f64).log2().ceil() as u64;
        let ntt = (pass * log_n).div_ceil(self.ntt_pipelines as u64).max(1);
        let o = &self.latency;
        match op {
            VecOp::Mmul => o.mmul.unwrap_or(pass),
            VecOp::Mmad => o.mmad.unwrap_or(pass),
            VecOp::Mac => o.mac.unwrap_or(pass),
            VecOp::Ntt => o.ntt.unwrap_or(ntt),
            // The non-deferred inverse transform spends one more pass on 1/n.
            VecOp::Intt => o.intt.unwrap_or(ntt) + if flags.defer { 0 } else { pass },
            VecOp::Auto => o.auto.unwrap_or(pass),
            VecOp::Copy => o.copy.unwrap_or(pass),
            VecOp::Load | VecOp::Store => 0,
        }
    }

    /// Cycles from issue until the last output word is written.
    pub fn latency(&self, op: VecOp, flags: Flags, n: usize) -> u64 {
        self.occupancy(op, flags, n) + self.pipeline_depth
    }

    pub fn poly_bytes(n: usize) -> u64 {
        n as u64 * 8
    }

    /// Channel occupancy of one residue-polynomial transfer.
    pub fn dram_transfer_cycles(&self, n: usize) -> u64 {
        (Self::poly_bytes(n) as f64 / self.dram_bytes_per_cycle).ceil() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let hw = HardwareDescription::from_toml_str("sram_slots = 12\n[units]\nntt = 1\n").unwrap();
        assert_eq!(hw.sram_slots, 12);
        assert_eq!(hw.units.ntt, 1);
        assert_eq!(hw.units.mmul, Units::default().mmul);
        assert_eq!(hw.lanes, HardwareDescription::default().lanes);
        let back = HardwareDescription::from_toml_str(&hw.to_toml_string()).unwrap();
        assert_eq!(back, hw);
    }

    #[test]
    fn invalid_descriptions_are_rejected() {
        assert!(HardwareDescription::from_toml_str("sram_slots = 1").is_err());
        assert!(HardwareDescription::from_toml_str("[units]\nmmul = 0").is_err());
        assert!(HardwareDescription::from_toml_str("dram_bytes_per_cycle = 0.0").is_err());
        assert!(HardwareDescription::from_toml_str("bogus = 3").is_err());
    }

    #[test]
    fn default_latencies_follow_the_ring_degree() {
        let hw = HardwareDescription::default();
        let n = 1024;
        assert_eq!(hw.occupancy(VecOp::Mmul, Flags::default(), n), 16);
        assert_eq!(hw.occupancy(VecOp::Ntt, Flags::default(), n), 160);
        let defer = Flags {
            defer: true,
            ..Flags::default()
        };
        assert_eq!(hw.occupancy(VecOp::Intt, defer, n), 160);
        assert_eq!(hw.occupancy(VecOp::Intt, Flags::default(), n), 176);
        assert_eq!(hw.dram_transfer_cycles(n), 128);
    }
}
