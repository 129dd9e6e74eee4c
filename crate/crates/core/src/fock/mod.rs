//! Dense linear algebra on truncated Fock spaces.
//!
//! Every object carries a [`Space`] tag. Joint objects are flattened with the
//! field index slow and the mirror index fast: `|n>_f |m>_m` sits at
//! `n * mirror_dim + m`.

mod displacement;
mod spectral;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

pub use displacement::{displacement_op, resolved_levels, Displacer};
pub use spectral::{hermiticity_defect, Spectrum, HERMITIAN_TOL};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Tolerances applied when validating states.
pub const NORM_TOL: f64 = 1e-12;
pub const DENSITY_HERMITIAN_TOL: f64 = 1e-12;
pub const DENSITY_TRACE_TOL: f64 = 1e-10;
pub const DENSITY_PSD_TOL: f64 = 1e-10;

/// A single bosonic mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Field,
    Mirror,
}

/// Which Hilbert space an object lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Field,
    Mirror,
    Joint { field: usize, mirror: usize },
}

impl From<Mode> for Space {
    fn from(mode: Mode) -> Self {
        match mode {
            Mode::Field => Space::Field,
            Mode::Mirror => Space::Mirror,
        }
    }
}

impl Space {
    fn check_dim(self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidDimension {
                dim,
                reason: "dimension must be positive",
            });
        }
        if let Space::Joint { field, mirror } = self {
            if field * mirror != dim {
                return Err(Error::InvalidDimension {
                    dim,
                    reason: "joint dimension must equal field_dim * mirror_dim",
                });
            }
        }
        Ok(())
    }

    fn expect(self, expected: Space) -> Result<()> {
        if self == expected {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                expected,
                found: self,
            })
        }
    }

    /// `(field_dim, mirror_dim)` for joint spaces.
    pub fn joint_dims(self) -> Option<(usize, usize)> {
        match self {
            Space::Joint { field, mirror } => Some((field, mirror)),
            _ => None,
        }
    }
}

/// A dense square operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    space: Space,
    entries: DMatrix<C64>,
}

impl OperatorMatrix {
    pub fn new(space: Space, entries: DMatrix<C64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidDimension {
                dim: entries.nrows(),
                reason: "operator matrix must be square",
            });
        }
        space.check_dim(entries.nrows())?;
        Ok(Self { space, entries })
    }

    pub fn identity(space: Space, dim: usize) -> Result<Self> {
        Self::new(space, DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            entries: self.entries.adjoint(),
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        rhs.space.expect(self.space)?;
        self.check_same_dim(rhs.dim())?;
        Ok(Self {
            space: self.space,
            entries: &self.entries * &rhs.entries,
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        rhs.space.expect(self.space)?;
        self.check_same_dim(rhs.dim())?;
        Ok(Self {
            space: self.space,
            entries: &self.entries + &rhs.entries,
        })
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            space: self.space,
            entries: self.entries.map(|z| z * factor),
        }
    }

    /// `[self, rhs]`
    pub fn commutator(&self, rhs: &Self) -> Result<Self> {
        let ab = self.matmul(rhs)?;
        let ba = rhs.matmul(self)?;
        Ok(Self {
            space: self.space,
            entries: ab.entries - ba.entries,
        })
    }

    pub fn apply(&self, psi: &StateVector) -> Result<DVector<C64>> {
        psi.space.expect(self.space)?;
        self.check_same_dim(psi.dim())?;
        Ok(&self.entries * &psi.entries)
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.entries)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// `max |U^dag U - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        (self.entries.ad_mul(&self.entries) - DMatrix::<C64>::identity(n, n))
            .iter()
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_defect() <= tol
    }

    /// Largest elementwise distance to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.entries - &other.entries)
            .iter()
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    fn check_same_dim(&self, dim: usize) -> Result<()> {
        if dim == self.dim() {
            Ok(())
        } else {
            Err(Error::InvalidDimension {
                dim,
                reason: "operand dimensions differ",
            })
        }
    }
}

/// A normalised ket.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    space: Space,
    entries: DVector<C64>,
}

impl StateVector {
    /// Wraps an already normalised vector.
    pub fn new(space: Space, entries: DVector<C64>) -> Result<Self> {
        space.check_dim(entries.len())?;
        let norm = entries.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("norm {norm} differs from 1")));
        }
        Ok(Self { space, entries })
    }

    /// Normalises `entries` and wraps them.
    pub fn normalized(space: Space, entries: DVector<C64>) -> Result<Self> {
        space.check_dim(entries.len())?;
        let norm = entries.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidState(format!("cannot normalise vector of norm {norm}")));
        }
        Ok(Self {
            space,
            entries: entries.unscale(norm),
        })
    }

    /// Fock basis state `|n>`.
    pub fn basis(space: Space, dim: usize, n: usize) -> Result<Self> {
        space.check_dim(dim)?;
        if n >= dim {
            return Err(Error::InvalidDimension {
                dim,
                reason: "basis index must be below the dimension",
            });
        }
        let mut v = DVector::from_element(dim, ZERO);
        v[n] = ONE;
        Ok(Self { space, entries: v })
    }

    pub(crate) fn from_raw(space: Space, entries: DVector<C64>) -> Self {
        Self { space, entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn entries(&self) -> &DVector<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DVector<C64> {
        self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    /// `<self|other>`
    pub fn inner(&self, other: &Self) -> Result<C64> {
        other.space.expect(self.space)?;
        if other.dim() != self.dim() {
            return Err(Error::InvalidDimension {
                dim: other.dim(),
                reason: "operand dimensions differ",
            });
        }
        Ok(self.entries.dotc(&other.entries))
    }

    /// `<self|A|self>`
    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        let a_psi = op.apply(self)?;
        Ok(self.entries.dotc(&a_psi))
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix {
            space: self.space,
            entries: &self.entries * self.entries.adjoint(),
        }
    }

    /// Population of Fock level `n` (single-mode states only).
    pub fn population(&self, n: usize) -> f64 {
        self.entries.get(n).map_or(0.0, |z| z.norm_sqr())
    }
}

/// A validated density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: Space,
    entries: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity before wrapping.
    pub fn new(space: Space, entries: DMatrix<C64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidDensityMatrix("matrix is not square".into()));
        }
        space.check_dim(entries.nrows())?;
        let herm = hermiticity_defect(&entries);
        if herm > DENSITY_HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = entries.trace();
        if (tr - ONE).norm() > DENSITY_TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr} differs from 1")));
        }
        let min_eig = Spectrum::of_hermitian(&entries)?
            .eigenvalues()
            .first()
            .copied()
            .unwrap_or(0.0);
        if min_eig < -DENSITY_PSD_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { space, entries })
    }

    /// Mixture `sum_k p_k |psi_k><psi_k|`; weights are normalised to sum to one.
    pub fn from_ensemble(components: &[(f64, StateVector)]) -> Result<Self> {
        let first = components
            .first()
            .ok_or(Error::EmptyInput("ensemble has no components"))?;
        let space = first.1.space;
        let dim = first.1.dim();
        let total: f64 = components.iter().map(|(p, _)| *p).sum();
        if total.is_nan() || total <= 0.0 || components.iter().any(|(p, _)| *p < 0.0) {
            return Err(Error::InvalidDensityMatrix("ensemble weights must be nonnegative with positive sum".into()));
        }
        let mut rho = DMatrix::from_element(dim, dim, ZERO);
        for (p, psi) in components {
            psi.space.expect(space)?;
            rho += (&psi.entries * psi.entries.adjoint()).scale(*p / total);
        }
        Ok(Self { space, entries: rho })
    }

    pub(crate) fn from_raw(space: Space, entries: DMatrix<C64>) -> Self {
        Self { space, entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    /// `Tr rho^2`
    pub fn purity(&self) -> f64 {
        // Tr(rho rho) = sum |rho_ij|^2 for Hermitian rho
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Tr[rho A]`
    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        op.space.expect(self.space)?;
        if op.dim() != self.dim() {
            return Err(Error::InvalidDimension {
                dim: op.dim(),
                reason: "operand dimensions differ",
            });
        }
        Ok((&self.entries * &op.entries).trace())
    }

    pub fn population(&self, n: usize) -> f64 {
        if n < self.dim() {
            self.entries[(n, n)].re
        } else {
            0.0
        }
    }

    /// Eigen-decomposition into weighted pure components, dropping weights at
    /// or below `cutoff`.
    pub fn spectral_components(&self, cutoff: f64) -> Result<Vec<(f64, StateVector)>> {
        let eig = nalgebra::SymmetricEigen::new(self.entries.clone());
        let mut out: Vec<(f64, StateVector)> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > cutoff)
            .map(|(k, &p)| {
                let v = eig.eigenvectors.column(k).into_owned();
                StateVector::normalized(self.space, v).map(|s| (p, s))
            })
            .collect::<Result<_>>()?;
        out.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(out)
    }
}

fn mode_check(dim: usize, min: usize) -> Result<()> {
    if dim < min {
        Err(Error::InvalidDimension {
            dim,
            reason: if min >= 2 {
                "ladder operators need dim >= 2"
            } else {
                "dimension must be positive"
            },
        })
    } else {
        Ok(())
    }
}

/// Truncated annihilation operator: `<n-1|a|n> = sqrt(n)`.
pub fn annihilation_op(mode: Mode, dim: usize) -> Result<OperatorMatrix> {
    mode_check(dim, 2)?;
    let mut a = DMatrix::from_element(dim, dim, ZERO);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    OperatorMatrix::new(mode.into(), a)
}

pub fn creation_op(mode: Mode, dim: usize) -> Result<OperatorMatrix> {
    Ok(annihilation_op(mode, dim)?.adjoint())
}

/// `diag(0, 1, ..., dim - 1)`
pub fn number_op(mode: Mode, dim: usize) -> Result<OperatorMatrix> {
    mode_check(dim, 1)?;
    let n = DMatrix::from_fn(dim, dim, |i, j| if i == j { C64::new(i as f64, 0.0) } else { ZERO });
    OperatorMatrix::new(mode.into(), n)
}

/// Photon-number parity `(-1)^N`.
pub fn parity_op(mode: Mode, dim: usize) -> Result<OperatorMatrix> {
    mode_check(dim, 1)?;
    let p = DMatrix::from_fn(dim, dim, |i, j| {
        if i != j {
            ZERO
        } else if i % 2 == 0 {
            ONE
        } else {
            -ONE
        }
    });
    OperatorMatrix::new(mode.into(), p)
}

fn kron_mat(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Objects that can be combined into a joint field (x) mirror object.
pub trait Tensor: Sized {
    fn tensor(&self, mirror: &Self) -> Result<Self>;
}

fn joint_space(field: Space, mirror: Space, fd: usize, md: usize) -> Result<Space> {
    field.expect(Space::Field)?;
    mirror.expect(Space::Mirror)?;
    Ok(Space::Joint {
        field: fd,
        mirror: md,
    })
}

impl Tensor for OperatorMatrix {
    fn tensor(&self, mirror: &Self) -> Result<Self> {
        let space = joint_space(self.space, mirror.space, self.dim(), mirror.dim())?;
        Ok(Self {
            space,
            entries: kron_mat(&self.entries, &mirror.entries),
        })
    }
}

impl Tensor for StateVector {
    fn tensor(&self, mirror: &Self) -> Result<Self> {
        let space = joint_space(self.space, mirror.space, self.dim(), mirror.dim())?;
        Ok(Self {
            space,
            entries: self.entries.kronecker(&mirror.entries),
        })
    }
}

impl Tensor for DensityMatrix {
    fn tensor(&self, mirror: &Self) -> Result<Self> {
        let space = joint_space(self.space, mirror.space, self.dim(), mirror.dim())?;
        Ok(Self {
            space,
            entries: kron_mat(&self.entries, &mirror.entries),
        })
    }
}

/// Kronecker product with the field factor slow and the mirror factor fast.
pub fn tensor<T: Tensor>(field: &T, mirror: &T) -> Result<T> {
    field.tensor(mirror)
}

/// Reduced density matrix of one subsystem of a joint density matrix.
pub fn partial_trace(rho: &DensityMatrix, keep: Mode) -> Result<DensityMatrix> {
    let (fd, md) = rho.space.joint_dims().ok_or(Error::SpaceMismatch {
        expected: Space::Joint { field: 0, mirror: 0 },
        found: rho.space,
    })?;
    let e = &rho.entries;
    let out = match keep {
        Mode::Field => DMatrix::from_fn(fd, fd, |n, k| (0..md).map(|m| e[(n * md + m, k * md + m)]).sum()),
        Mode::Mirror => DMatrix::from_fn(md, md, |m, l| (0..fd).map(|n| e[(n * md + m, n * md + l)]).sum()),
    };
    Ok(DensityMatrix::from_raw(keep.into(), out))
}

/// Reduced state of one subsystem of a joint pure state, `Tr_other |psi><psi|`.
pub fn reduce_pure(psi: &StateVector, keep: Mode) -> Result<DensityMatrix> {
    let (fd, md) = psi.space.joint_dims().ok_or(Error::SpaceMismatch {
        expected: Space::Joint { field: 0, mirror: 0 },
        found: psi.space,
    })?;
    // rows: field index, columns: mirror index
    let amp = DMatrix::from_fn(fd, md, |n, m| psi.entries[n * md + m]);
    let out = match keep {
        Mode::Field => &amp * amp.adjoint(),
        Mode::Mirror => amp.transpose() * amp.map(|z| z.conj()),
    };
    Ok(DensityMatrix::from_raw(keep.into(), out))
}

/// `exp(-i H t)` by eigen-decomposition.
pub fn hermitian_expm(h: &OperatorMatrix, t: f64) -> Result<OperatorMatrix> {
    let spectrum = Spectrum::of_hermitian(h.entries())?;
    Ok(OperatorMatrix {
        space: h.space,
        entries: spectrum.propagator(t),
    })
}

/// Truncation leakage: total population in the two highest Fock levels of
/// each mode the state lives on.
pub fn leakage(psi: &StateVector) -> f64 {
    let top = |dim: usize, idx: &dyn Fn(usize) -> f64| -> f64 {
        (dim.saturating_sub(2)..dim).map(idx).sum()
    };
    match psi.space {
        Space::Joint { field, mirror } => {
            let e = &psi.entries;
            let field_top = top(field, &|n| (0..mirror).map(|m| e[n * mirror + m].norm_sqr()).sum());
            let mirror_top = top(mirror, &|m| (0..field).map(|n| e[n * mirror + m].norm_sqr()).sum());
            field_top + mirror_top
        }
        _ => top(psi.dim(), &|n| psi.entries[n].norm_sqr()),
    }
}
