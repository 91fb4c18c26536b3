//! Arithmetic core of the EFFACT software stack.
//!
//! * [`rns`]: word-sized NTT-friendly primes and Montgomery arithmetic.
//! * [`poly`]: residue polynomials and RNS polynomials with layout metadata.
//! * [`kernels`]: the residue-polynomial vector kernels the ISA exposes.
//! * [`ckks`]: a desk-scale RNS-CKKS pipeline used as the reference oracle
//!   for compiled programs.

pub mod ckks;
pub mod kernels;
pub mod poly;
pub mod rns;

pub use poly::{Domain, KernelError, Order, ResiduePoly, RnsPoly, Scalar};
pub use rns::{Modulus, MontgomeryForm, RnsBasis, RnsError};
