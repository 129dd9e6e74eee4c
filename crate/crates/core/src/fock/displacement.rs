use nalgebra::{DMatrix, DVector};

use super::{annihilation_op, OperatorMatrix, Spectrum};
use crate::error::{Error, Result};
use crate::fock::Mode;
use crate::C64;

fn check_amplitude(beta: C64, dim: usize) -> Result<()> {
    let amplitude_sq = beta.norm_sqr();
    if !amplitude_sq.is_finite() || amplitude_sq > dim as f64 {
        return Err(Error::TruncationOverflow { amplitude_sq, dim });
    }
    Ok(())
}

/// Number of leading Fock levels whose image under a displacement of size
/// `shift` stays well inside a space of dimension `dim`:
/// `floor((sqrt(dim) - shift - 1.5)^2)`.
///
/// Truncation damage enters at the top of the space and spreads downward, so
/// identities that hold in infinite dimension only hold on this leading block.
pub fn resolved_levels(dim: usize, shift: f64) -> usize {
    let r = (dim as f64).sqrt() - shift - 1.5;
    if r <= 0.0 {
        0
    } else {
        ((r * r).floor() as usize).min(dim)
    }
}

/// `D(beta) = exp(beta b^dag - beta^* b)`, computed by exponentiating the
/// truncated generator through its eigen-decomposition.
pub fn displacement_op(beta: C64, mode: Mode, dim: usize) -> Result<OperatorMatrix> {
    let b = annihilation_op(mode, dim)?;
    check_amplitude(beta, dim)?;
    if beta == C64::new(0.0, 0.0) {
        return OperatorMatrix::identity(mode.into(), dim);
    }
    // K = i (beta b^dag - beta^* b) is Hermitian and D = exp(-i K)
    let gen = (b.entries().adjoint() * beta - b.entries() * beta.conj()) * C64::new(0.0, 1.0);
    let spectrum = Spectrum::of_hermitian(&gen)?;
    OperatorMatrix::new(mode.into(), spectrum.propagator(1.0))
}

/// Displacements on a fixed truncated mode, sharing one eigen-decomposition.
///
/// With `K = i (b^dag - b)` and `R(phi) = exp(i phi b^dag b)`,
/// `D(r e^{i phi}) = R(phi) exp(-i r K) R(phi)^dag` holds exactly in the
/// truncated space, so every displacement reuses the spectrum of `K`.
#[derive(Debug, Clone)]
pub struct Displacer {
    mode: Mode,
    dim: usize,
    generator: Spectrum,
}

impl Displacer {
    pub fn new(mode: Mode, dim: usize) -> Result<Self> {
        let b = annihilation_op(mode, dim)?;
        let gen = (b.entries().adjoint() - b.entries()) * C64::new(0.0, 1.0);
        Ok(Self {
            mode,
            dim,
            generator: Spectrum::of_hermitian(&gen)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// `D(beta) v`
    pub fn apply(&self, beta: C64, v: &DVector<C64>) -> Result<DVector<C64>> {
        check_amplitude(beta, self.dim)?;
        if v.len() != self.dim {
            return Err(Error::InvalidDimension {
                dim: v.len(),
                reason: "vector length does not match displacer",
            });
        }
        if beta == C64::new(0.0, 0.0) {
            return Ok(v.clone());
        }
        let (r, phi) = beta.to_polar();
        let rotated = DVector::from_fn(self.dim, |m, _| v[m] * C64::from_polar(1.0, -phi * m as f64));
        let shifted = self.generator.evolve(&rotated, r);
        Ok(DVector::from_fn(self.dim, |m, _| shifted[m] * C64::from_polar(1.0, phi * m as f64)))
    }

    /// The matrix `D(beta)`.
    pub fn matrix(&self, beta: C64) -> Result<OperatorMatrix> {
        check_amplitude(beta, self.dim)?;
        if beta == C64::new(0.0, 0.0) {
            return OperatorMatrix::identity(self.mode.into(), self.dim);
        }
        let (r, phi) = beta.to_polar();
        let core = self.generator.propagator(r);
        let d = DMatrix::from_fn(self.dim, self.dim, |i, j| {
            core[(i, j)] * C64::from_polar(1.0, phi * (i as f64 - j as f64))
        });
        OperatorMatrix::new(self.mode.into(), d)
    }
}
