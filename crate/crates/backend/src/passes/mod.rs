//! Compiler passes, in pipeline order.

pub mod alloc;
pub mod lower;
pub mod memops;
pub mod peephole;
pub mod pre;
pub mod propagate;
pub mod schedule;
pub mod streaming;
