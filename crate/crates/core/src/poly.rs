//! Residue polynomials and RNS polynomials.
//!
//! A [`ResiduePoly`] is one limb: `n` words reduced modulo a single prime,
//! tagged with the layout it is stored in. Kernels check the tags on entry and
//! set them on exit, so a polynomial in the wrong domain, order or Montgomery
//! form is reported instead of silently producing garbage.

use std::fmt;

use thiserror::Error;

use crate::rns::{Modulus, MontgomeryForm, RnsBasis, RnsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Coeff,
    Ntt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Order {
    Natural,
    BitReversed,
}

/// Storage metadata of a residue polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    pub domain: Domain,
    pub order: Order,
    pub repr: MontgomeryForm,
    /// Set on inverse-NTT output whose final `1/n` factor was not applied.
    pub scale_deferred: bool,
}

impl Layout {
    pub const fn coeff(repr: MontgomeryForm) -> Self {
        Layout {
            domain: Domain::Coeff,
            order: Order::Natural,
            repr,
            scale_deferred: false,
        }
    }

    pub const fn ntt(repr: MontgomeryForm) -> Self {
        Layout {
            domain: Domain::Ntt,
            order: Order::BitReversed,
            repr,
            scale_deferred: false,
        }
    }

    pub fn with_repr(self, repr: MontgomeryForm) -> Self {
        Layout { repr, ..self }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.domain {
            Domain::Coeff => "coeff",
            Domain::Ntt => "ntt",
        };
        let o = match self.order {
            Order::Natural => "nat",
            Order::BitReversed => "brv",
        };
        write!(f, "{d}/{o}/{}", self.repr)?;
        if self.scale_deferred {
            f.write_str("/deferred")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u64, u64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("coefficient {value} at index {index} is not reduced modulo {q}")]
    Unreduced { index: usize, value: u64, q: u64 },
    #[error("{op} expects layout {expected}, found {found}")]
    WrongLayout {
        op: &'static str,
        expected: String,
        found: Layout,
    },
    #[error("operand layouts differ: {0} vs {1}")]
    LayoutMismatch(Layout, Layout),
    #[error("Montgomery product of {0} and {1} has no representable form")]
    FormOverflow(MontgomeryForm, MontgomeryForm),
    #[error("{0} cannot consume a scale-deferred polynomial")]
    ScaleDeferred(&'static str),
    #[error("source and target bases share modulus {0}")]
    OverlappingBases(u64),
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),
    #[error("lane count {0} must be a power of two dividing the degree {1}")]
    BadShape(usize, usize),
    #[error(transparent)]
    Rns(#[from] RnsError),
}

/// A word operand for vector-scalar operations, tagged with its form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Scalar {
    pub value: u64,
    pub form: MontgomeryForm,
}

impl Scalar {
    pub fn new(value: u64, form: MontgomeryForm) -> Self {
        Scalar { value, form }
    }

    /// Encodes the plain residue `x` in `form` for modulus `m`.
    pub fn encode(x: u64, form: MontgomeryForm, m: &Modulus) -> Self {
        Scalar {
            value: m.encode(x % m.value(), form),
            form,
        }
    }
}

/// One limb: `n` residues modulo a single prime.
#[derive(Clone, PartialEq, Eq)]
pub struct ResiduePoly {
    modulus: Modulus,
    coeffs: Vec<u64>,
    layout: Layout,
}

impl fmt::Debug for ResiduePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResiduePoly")
            .field("q", &self.modulus.value())
            .field("layout", &self.layout)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl ResiduePoly {
    /// Checked constructor: length must equal the modulus degree and every
    /// coefficient must be reduced.
    pub fn new(modulus: Modulus, coeffs: Vec<u64>, layout: Layout) -> Result<Self, KernelError> {
        if coeffs.len() != modulus.degree() {
            return Err(KernelError::LengthMismatch(coeffs.len(), modulus.degree()));
        }
        let q = modulus.value();
        if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, &c)| c >= q) {
            return Err(KernelError::Unreduced { index, value, q });
        }
        Ok(ResiduePoly {
            modulus,
            coeffs,
            layout,
        })
    }

    /// Plain coefficients, natural order, NM form.
    pub fn from_coeffs(modulus: Modulus, coeffs: Vec<u64>) -> Result<Self, KernelError> {
        Self::new(modulus, coeffs, Layout::coeff(MontgomeryForm::Nm))
    }

    /// Reduces signed coefficients into `[0, q)`.
    pub fn from_signed(modulus: &Modulus, coeffs: &[i64]) -> Result<Self, KernelError> {
        let v = coeffs.iter().map(|&c| modulus.reduce_i64(c)).collect();
        Self::from_coeffs(modulus.clone(), v)
    }

    pub fn zero(modulus: Modulus, layout: Layout) -> Self {
        let n = modulus.degree();
        ResiduePoly {
            modulus,
            coeffs: vec![0; n],
            layout,
        }
    }

    pub(crate) fn from_parts(modulus: Modulus, coeffs: Vec<u64>, layout: Layout) -> Self {
        debug_assert_eq!(coeffs.len(), modulus.degree());
        ResiduePoly {
            modulus,
            coeffs,
            layout,
        }
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<u64> {
        self.coeffs
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn domain(&self) -> Domain {
        self.layout.domain
    }

    pub fn order(&self) -> Order {
        self.layout.order
    }

    pub fn repr(&self) -> MontgomeryForm {
        self.layout.repr
    }

    pub fn is_scale_deferred(&self) -> bool {
        self.layout.scale_deferred
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Re-encodes every coefficient into `form`, leaving the value unchanged.
    pub fn to_form(&self, form: MontgomeryForm) -> ResiduePoly {
        if form == self.layout.repr {
            return self.clone();
        }
        let m = &self.modulus;
        let from = self.layout.repr;
        let coeffs = self
            .coeffs
            .iter()
            .map(|&c| m.encode(m.decode(c, from), form))
            .collect();
        ResiduePoly::from_parts(m.clone(), coeffs, self.layout.with_repr(form))
    }

    /// Plain residues, whatever the stored form.
    pub fn plain_values(&self) -> Vec<u64> {
        let m = &self.modulus;
        self.coeffs.iter().map(|&c| m.decode(c, self.layout.repr)).collect()
    }
}

/// A polynomial in RNS form: one limb per basis modulus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsPoly {
    basis: RnsBasis,
    limbs: Vec<ResiduePoly>,
}

impl RnsPoly {
    pub fn new(basis: RnsBasis, limbs: Vec<ResiduePoly>) -> Result<Self, KernelError> {
        if limbs.len() != basis.len() {
            return Err(KernelError::BasisMismatch(format!(
                "{} limbs for a basis of {}",
                limbs.len(),
                basis.len()
            )));
        }
        for (l, m) in limbs.iter().zip(basis.moduli()) {
            if l.modulus() != m {
                return Err(KernelError::ModulusMismatch(l.modulus().value(), m.value()));
            }
        }
        if let Some(first) = limbs.first() {
            if let Some(other) = limbs.iter().find(|l| l.layout() != first.layout()) {
                return Err(KernelError::LayoutMismatch(first.layout(), other.layout()));
            }
        }
        Ok(RnsPoly { basis, limbs })
    }

    pub fn zero(basis: RnsBasis, layout: Layout) -> Self {
        let limbs = basis
            .moduli()
            .iter()
            .map(|m| ResiduePoly::zero(m.clone(), layout))
            .collect();
        RnsPoly { basis, limbs }
    }

    /// Reduces one signed coefficient vector into every limb of `basis`.
    pub fn from_signed(basis: RnsBasis, coeffs: &[i64]) -> Result<Self, KernelError> {
        let limbs = basis
            .moduli()
            .iter()
            .map(|m| ResiduePoly::from_signed(m, coeffs))
            .collect::<Result<Vec<_>, _>>()?;
        RnsPoly::new(basis, limbs)
    }

    pub fn basis(&self) -> &RnsBasis {
        &self.basis
    }

    pub fn limbs(&self) -> &[ResiduePoly] {
        &self.limbs
    }

    pub fn limb(&self, i: usize) -> &ResiduePoly {
        &self.limbs[i]
    }

    pub fn into_limbs(self) -> Vec<ResiduePoly> {
        self.limbs
    }

    pub fn len(&self) -> usize {
        self.limbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.limbs.is_empty()
    }

    pub fn layout(&self) -> Option<Layout> {
        self.limbs.first().map(|l| l.layout())
    }

    /// Keeps the first `k` limbs.
    pub fn truncate(&self, k: usize) -> RnsPoly {
        RnsPoly {
            basis: self.basis.prefix(k),
            limbs: self.limbs[..k].to_vec(),
        }
    }

    /// Applies a per-limb kernel.
    pub fn map_limbs<F>(&self, mut f: F) -> Result<RnsPoly, KernelError>
    where
        F: FnMut(&ResiduePoly) -> Result<ResiduePoly, KernelError>,
    {
        let limbs = self.limbs.iter().map(&mut f).collect::<Result<Vec<_>, _>>()?;
        RnsPoly::new(self.basis.clone(), limbs)
    }

    /// Applies a per-limb binary kernel; both operands must share a basis.
    pub fn zip_limbs<F>(&self, other: &RnsPoly, mut f: F) -> Result<RnsPoly, KernelError>
    where
        F: FnMut(&ResiduePoly, &ResiduePoly) -> Result<ResiduePoly, KernelError>,
    {
        if self.basis != other.basis {
            return Err(KernelError::BasisMismatch(
                "operands live on different bases".into(),
            ));
        }
        let limbs = self
            .limbs
            .iter()
            .zip(&other.limbs)
            .map(|(a, b)| f(a, b))
            .collect::<Result<Vec<_>, _>>()?;
        RnsPoly::new(self.basis.clone(), limbs)
    }
}
