//! Spectral decomposition of Hermitian matrices and functions of them.
//!
//! The matrix is first split into its invariant blocks (connected components
//! of the nonzero pattern), so a Hamiltonian that conserves some quantum
//! number is diagonalised sector by sector. Each block is then diagonalised on
//! the cheapest exact route available:
//!
//! * tridiagonal Hermitian blocks are made real by a diagonal phase
//!   similarity `S^dag H S` and handed to LAPACK's `dstevr`, with the phases
//!   kept aside;
//! * other real symmetric blocks use the real solver directly;
//! * anything else goes through the complex Hermitian solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::os::raw::c_char;

use crate::error::{Error, Result};
use crate::C64;

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Basis {
    Real(DMatrix<f64>),
    /// Eigenvectors are `diag(phases) * vectors`.
    Phased {
        phases: DVector<C64>,
        vectors: DMatrix<f64>,
    },
    Complex(DMatrix<C64>),
}

#[derive(Debug, Clone)]
struct Block {
    indices: Vec<usize>,
    values: DVector<f64>,
    basis: Basis,
}

/// Eigen-decomposition `H = V diag(E) V^dag` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    dim: usize,
    blocks: Vec<Block>,
}

/// Largest elementwise deviation `max |H - H^dag|`.
pub fn hermiticity_defect(h: &DMatrix<C64>) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(h: &DMatrix<C64>) -> f64 {
    h.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Connected components of the off-diagonal nonzero pattern, each sorted.
fn components(h: &DMatrix<C64>) -> Vec<Vec<usize>> {
    let n = h.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for j in 0..n {
        for i in 0..j {
            let z = h[(i, j)];
            if z.re != 0.0 || z.im != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups
}

fn is_tridiagonal(m: &DMatrix<C64>) -> bool {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            if i.abs_diff(j) > 1 && (m[(i, j)].re != 0.0 || m[(i, j)].im != 0.0) {
                return false;
            }
        }
    }
    true
}

#[link(name = "lapack")]
extern "C" {}

/// Eigenpairs of the real symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e`, by LAPACK `dstevr`. Falls back to the dense solver if
/// LAPACK reports failure.
fn tridiagonal_eigen(mut d: Vec<f64>, mut e: Vec<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = d.len();
    if n == 1 {
        return (DVector::from_vec(d), DMatrix::identity(1, 1));
    }
    let dense = |d: &[f64], e: &[f64]| {
        let m = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => d[i],
            1 => e[i.min(j)],
            _ => 0.0,
        });
        let eig = SymmetricEigen::new(m);
        (eig.eigenvalues, eig.eigenvectors)
    };
    let (d0, e0) = (d.clone(), e.clone());
    e.push(0.0);
    let ni = n as i32;
    let (lwork, liwork) = (20 * ni, 10 * ni);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n * n];
    let mut isuppz = vec![0i32; 2 * n];
    let mut work = vec![0.0; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    let (mut found, mut info) = (0i32, 0i32);
    // SAFETY: every buffer has the length dstevr requires for jobz = 'V',
    // range = 'A' and ldz = n.
    unsafe {
        lapack_sys::dstevr_(
            b"V".as_ptr() as *const c_char,
            b"A".as_ptr() as *const c_char,
            &ni,
            d.as_mut_ptr(),
            e.as_mut_ptr(),
            &0.0,
            &0.0,
            &0,
            &0,
            &0.0,
            &mut found,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &ni,
            isuppz.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 || found != ni {
        return dense(&d0, &e0);
    }
    (DVector::from_vec(w), DMatrix::from_vec(n, n, z))
}

fn decompose_block(m: DMatrix<C64>) -> (DVector<f64>, Basis) {
    let n = m.nrows();
    if is_tridiagonal(&m) {
        let mut phases = DVector::from_element(n, C64::new(1.0, 0.0));
        let diag: Vec<f64> = (0..n).map(|k| m[(k, k)].re).collect();
        let mut off = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n.saturating_sub(1) {
            let sub = m[(k + 1, k)];
            let r = sub.norm();
            let unit = if r > 0.0 { sub / r } else { C64::new(1.0, 0.0) };
            phases[k + 1] = phases[k] * unit;
            off.push(r);
        }
        let (values, vectors) = tridiagonal_eigen(diag, off);
        return (values, Basis::Phased { phases, vectors });
    }
    if m.iter().all(|z| z.im == 0.0) {
        let real = m.map(|z| z.re);
        let eig = SymmetricEigen::new(real);
        return (eig.eigenvalues, Basis::Real(eig.eigenvectors));
    }
    let eig = SymmetricEigen::new(m);
    (eig.eigenvalues, Basis::Complex(eig.eigenvectors))
}

/// `V^T x` for real `V` and complex `x`.
fn real_tr_mul(v: &DMatrix<f64>, x: &DVector<C64>) -> DVector<C64> {
    let re = v.tr_mul(&x.map(|z| z.re));
    let im = v.tr_mul(&x.map(|z| z.im));
    DVector::from_fn(re.len(), |k, _| C64::new(re[k], im[k]))
}

/// `V x` for real `V` and complex `x`.
fn real_mul(v: &DMatrix<f64>, x: &DVector<C64>) -> DVector<C64> {
    let re = v * x.map(|z| z.re);
    let im = v * x.map(|z| z.im);
    DVector::from_fn(re.len(), |k, _| C64::new(re[k], im[k]))
}

impl Block {
    /// Coefficients of `x` in the eigenbasis, `V^dag x`.
    fn project(&self, x: &DVector<C64>) -> DVector<C64> {
        match &self.basis {
            Basis::Real(v) => real_tr_mul(v, x),
            Basis::Phased { phases, vectors } => {
                let y = x.zip_map(phases, |a, p| a * p.conj());
                real_tr_mul(vectors, &y)
            }
            Basis::Complex(v) => v.ad_mul(x),
        }
    }

    /// `V c` for eigenbasis coefficients `c`.
    fn expand(&self, c: &DVector<C64>) -> DVector<C64> {
        match &self.basis {
            Basis::Real(v) => real_mul(v, c),
            Basis::Phased { phases, vectors } => real_mul(vectors, c).zip_map(phases, |a, p| a * p),
            Basis::Complex(v) => v * c,
        }
    }

    fn vectors_complex(&self) -> DMatrix<C64> {
        match &self.basis {
            Basis::Real(v) => v.map(|x| C64::new(x, 0.0)),
            Basis::Phased { phases, vectors } => {
                DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| phases[i] * vectors[(i, j)])
            }
            Basis::Complex(v) => v.clone(),
        }
    }
}

impl Spectrum {
    /// Decompose `h`, which must be Hermitian to within a relative
    /// [`HERMITIAN_TOL`].
    pub fn of_hermitian(h: &DMatrix<C64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() != n {
            return Err(Error::InvalidDimension {
                dim: n,
                reason: "spectral decomposition needs a nonempty square matrix",
            });
        }
        let defect = hermiticity_defect(h);
        if defect > HERMITIAN_TOL * max_abs(h).max(1.0) {
            return Err(Error::NotHermitian { defect });
        }
        let sym = (h + h.adjoint()).scale(0.5);
        let blocks = components(&sym)
            .into_iter()
            .map(|indices| {
                let k = indices.len();
                let sub = DMatrix::from_fn(k, k, |i, j| sym[(indices[i], indices[j])]);
                let (values, basis) = decompose_block(sub);
                Block {
                    indices,
                    values,
                    basis,
                }
            })
            .collect();
        Ok(Self { dim: n, blocks })
    }

    /// Decompose a block-diagonal Hermitian matrix given as its diagonal
    /// blocks in order, without forming the full matrix.
    pub fn of_hermitian_sectors(sectors: &[DMatrix<C64>]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for h in sectors {
            let s = Self::of_hermitian(h)?;
            blocks.extend(s.blocks.into_iter().map(|mut b| {
                b.indices.iter_mut().for_each(|i| *i += offset);
                b
            }));
            offset += s.dim;
        }
        if offset == 0 {
            return Err(Error::InvalidDimension {
                dim: 0,
                reason: "spectral decomposition needs a nonempty square matrix",
            });
        }
        Ok(Self { dim: offset, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of invariant blocks found.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// All eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        all
    }

    /// `f(H) x` without forming `f(H)`.
    pub fn apply_fn<F: Fn(f64) -> C64>(&self, f: F, x: &DVector<C64>) -> DVector<C64> {
        assert_eq!(x.len(), self.dim, "vector length does not match spectrum");
        let mut out = DVector::from_element(self.dim, C64::new(0.0, 0.0));
        for block in &self.blocks {
            let local = DVector::from_fn(block.indices.len(), |i, _| x[block.indices[i]]);
            let mut coeffs = block.project(&local);
            for (c, &e) in coeffs.iter_mut().zip(block.values.iter()) {
                *c *= f(e);
            }
            let y = block.expand(&coeffs);
            for (i, &idx) in block.indices.iter().enumerate() {
                out[idx] = y[i];
            }
        }
        out
    }

    /// The matrix `f(H) = V diag(f(E)) V^dag`.
    pub fn matrix_fn<F: Fn(f64) -> C64>(&self, f: F) -> DMatrix<C64> {
        let mut out = DMatrix::from_element(self.dim, self.dim, C64::new(0.0, 0.0));
        for block in &self.blocks {
            let v = block.vectors_complex();
            let k = block.indices.len();
            let mut scaled = v.clone();
            for (j, &e) in block.values.iter().enumerate() {
                let fe = f(e);
                for i in 0..k {
                    scaled[(i, j)] *= fe;
                }
            }
            let local = scaled * v.adjoint();
            for (i, &ri) in block.indices.iter().enumerate() {
                for (j, &cj) in block.indices.iter().enumerate() {
                    out[(ri, cj)] = local[(i, j)];
                }
            }
        }
        out
    }

    /// `exp(-i H t) x`.
    pub fn evolve(&self, x: &DVector<C64>, t: f64) -> DVector<C64> {
        self.apply_fn(|e| C64::new(0.0, -e * t).exp(), x)
    }

    /// `exp(-i H t) x` at every `t` in `times`, projecting `x` only once.
    pub fn evolve_many(&self, x: &DVector<C64>, times: &[f64]) -> Vec<DVector<C64>> {
        assert_eq!(x.len(), self.dim, "vector length does not match spectrum");
        let projected: Vec<DVector<C64>> = self
            .blocks
            .iter()
            .map(|b| b.project(&DVector::from_fn(b.indices.len(), |i, _| x[b.indices[i]])))
            .collect();
        times
            .iter()
            .map(|&t| {
                let mut out = DVector::from_element(self.dim, C64::new(0.0, 0.0));
                for (block, coeffs) in self.blocks.iter().zip(&projected) {
                    let phased = coeffs.zip_map(&block.values, |c, e| c * C64::new(0.0, -e * t).exp());
                    let y = block.expand(&phased);
                    for (i, &idx) in block.indices.iter().enumerate() {
                        out[idx] = y[i];
                    }
                }
                out
            })
            .collect()
    }

    /// `exp(-i H t)`.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        self.matrix_fn(|e| C64::new(0.0, -e * t).exp())
    }
}
