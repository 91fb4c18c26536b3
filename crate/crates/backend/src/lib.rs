//! Vector ISA, compiler backend, golden executor and cycle simulator.

pub mod binary;
pub mod compile;
pub mod exec;
pub mod hw;
pub mod ir;
pub mod memory;
pub mod passes;
pub mod sim;
pub mod text;
pub mod workloads;
