//! Inversion of quadrature records into characteristic-function samples,
//! gridding of the scattered samples, and the Fourier transform to the
//! Wigner function.
//!
//! Samples only ever lie on circles `|lambda + eta| = eta` (and their mirror
//! images), so the gridded field is a mix of three kinds of cells, see
//! [`CellStatus`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};

use crate::analytic::ProtocolKernel;
use crate::dynamics::{Frame, QuadratureRecord};
use crate::error::{Error, Result};
use crate::states::PhaseSpaceProbe;
use crate::C64;

/// Samples with `|P(t)| < P_MIN_REL |alpha|` are rejected.
pub const P_MIN_REL: f64 = 1e-6;

/// Samples closer than this to the origin are merged.
pub const ORIGIN_TOL: f64 = 1e-12;

/// Largest tolerated imaginary part of a transformed Wigner value.
pub const IMAG_RESIDUE_TOL: f64 = 1e-6;

/// Convention tag written with every Wigner grid.
pub const WIGNER_CONVENTION: &str = "W(beta)=(2/pi)Tr[rho D(beta) (-1)^N D(beta)^dag]";

/// A characteristic-function estimate `chi_hat ~ chi(lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharSample {
    pub lambda: C64,
    pub chi_hat: C64,
    /// Inverse estimated variance; 1 for noiseless samples.
    pub weight: f64,
    /// Identifier of the record (or records) the sample came from.
    pub source: String,
}

/// Result of inverting one record.
#[derive(Debug, Clone, PartialEq)]
pub enum Inversion {
    Sample(CharSample),
    /// `|P(t)|` fell below the rejection threshold.
    Rejected { t: f64, prefactor: f64 },
}

/// `chi_hat = <a> / P(t)` at `lambda(t)`, using the default threshold
/// `P_MIN_REL |alpha|`.
pub fn invert_record(record: &QuadratureRecord, frame: Frame, kernel: &ProtocolKernel, source: &str) -> Result<Inversion> {
    let p_min = P_MIN_REL * kernel.params().alpha().norm();
    invert_record_with(record, frame, kernel, source, p_min)
}

/// [`invert_record`] with an explicit rejection threshold on `|P(t)|`.
pub fn invert_record_with(
    record: &QuadratureRecord,
    frame: Frame,
    kernel: &ProtocolKernel,
    source: &str,
    p_min: f64,
) -> Result<Inversion> {
    if frame != kernel.frame() {
        return Err(Error::FrameMismatch {
            record: frame.to_string(),
            kernel: kernel.frame().to_string(),
        });
    }
    let p = kernel.prefactor(record.t)?;
    if p.norm() < p_min {
        return Ok(Inversion::Rejected {
            t: record.t,
            prefactor: p.norm(),
        });
    }
    let a = C64::new(record.x_mean, record.y_mean) / std::f64::consts::SQRT_2;
    let weight = match (record.noisy, record.shots) {
        (true, Some(shots)) => {
            let var = record.x_var + record.y_var;
            if var > 0.0 {
                shots as f64 * 2.0 * p.norm_sqr() / var
            } else {
                f64::INFINITY
            }
        }
        _ => 1.0,
    };
    Ok(Inversion::Sample(CharSample {
        lambda: kernel.lambda(record.t),
        chi_hat: a / p,
        weight,
        source: source.to_string(),
    }))
}

/// Inverts a record list; returns the samples and the number rejected.
/// Sources are `<prefix>#<index>`.
pub fn invert_records(
    records: &[QuadratureRecord],
    frame: Frame,
    kernel: &ProtocolKernel,
    prefix: &str,
) -> Result<(Vec<CharSample>, usize)> {
    let mut samples = Vec::with_capacity(records.len());
    let mut rejected = 0;
    for (k, r) in records.iter().enumerate() {
        match invert_record(r, frame, kernel, &format!("{prefix}#{k}"))? {
            Inversion::Sample(s) => samples.push(s),
            Inversion::Rejected { .. } => rejected += 1,
        }
    }
    Ok((samples, rejected))
}

/// Union of sample groups plus Hermitian mirror images
/// `(-lambda, conj chi)`. Samples at the origin (and their images) are
/// merged into one weighted average. Originals come first, then images.
pub fn assemble_samples(groups: &[Vec<CharSample>]) -> Result<Vec<CharSample>> {
    let all: Vec<&CharSample> = groups.iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::EmptyInput("characteristic-function samples"));
    }
    let (origin, rest): (Vec<&CharSample>, Vec<&CharSample>) = all.into_iter().partition(|s| s.lambda.norm() < ORIGIN_TOL);
    let mut out: Vec<CharSample> = rest.iter().map(|s| (*s).clone()).collect();
    out.extend(rest.iter().map(|s| CharSample {
        lambda: -s.lambda,
        chi_hat: s.chi_hat.conj(),
        weight: s.weight,
        source: format!("{}~", s.source),
    }));
    if !origin.is_empty() {
        // each origin sample counts together with its own image
        let total: f64 = origin.iter().map(|s| 2.0 * s.weight).sum();
        let chi = if total.is_finite() && total > 0.0 {
            origin.iter().map(|s| C64::new(s.chi_hat.re, 0.0) * (2.0 * s.weight)).sum::<C64>() / total
        } else {
            C64::new(origin.iter().map(|s| s.chi_hat.re).sum::<f64>() / origin.len() as f64, 0.0)
        };
        out.push(CharSample {
            lambda: C64::new(0.0, 0.0),
            chi_hat: chi,
            weight: total,
            source: format!("origin[{}]", origin.len()),
        });
    }
    Ok(out)
}

/// A square grid of `n x n` points (n odd) centred on `center` with
/// half-width `half_width`. Index `(i, j)` is the point
/// `center + x_i + i y_j`; `i` runs along the real axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    center: C64,
    half_width: f64,
    n: usize,
}

impl GridGeometry {
    pub fn new(center: C64, half_width: f64, n: usize) -> Result<Self> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: format!("grid side must be odd and at least 3, got {n}"),
            });
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "half_width",
                reason: format!("must be positive, got {half_width}"),
            });
        }
        if !(center.re.is_finite() && center.im.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "center",
                reason: "must be finite".into(),
            });
        }
        Ok(Self { center, half_width, n })
    }

    /// Origin-centred grid with spacing `spacing` reaching at least
    /// `reach` from the origin.
    pub fn centered_with_spacing(reach: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "spacing",
                reason: format!("must be positive, got {spacing}"),
            });
        }
        let half_cells = (reach / spacing).ceil().max(1.0) as usize;
        Self::new(C64::new(0.0, 0.0), spacing * half_cells as f64, 2 * half_cells + 1)
    }

    pub fn center(&self) -> C64 {
        self.center
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    /// Offset of index `k` from the centre along either axis.
    pub fn offset(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.spacing()
    }

    pub fn point(&self, i: usize, j: usize) -> C64 {
        self.center + C64::new(self.offset(i), self.offset(j))
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing() * self.spacing()
    }
}

/// How a gridded cell got its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellStatus {
    /// Samples surround the node: value from a weighted local linear fit.
    Resolved,
    /// Samples reach the node from one side only (typically a single curve):
    /// weighted average, first-order accurate in the grid spacing.
    Sampled,
    /// No sample weight: nearest covered value damped by the Gaussian
    /// envelope `e^{-(|lambda|^2 - |lambda_k|^2)/2}`.
    Filled,
}

impl CellStatus {
    pub fn is_covered(self) -> bool {
        self != CellStatus::Filled
    }
}

/// Gridding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Cells whose accumulated bilinear weight is below `w_min` times the
    /// mean sample weight are uncovered.
    pub w_min: f64,
    /// A local fit is accepted when the smallest eigenvalue of its normal
    /// matrix is at least `fit_condition` times the largest.
    pub fit_condition: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            w_min: 0.05,
            fit_condition: 1e-2,
        }
    }
}

/// A gridded, Hermitian-symmetrised characteristic function.
#[derive(Debug, Clone, PartialEq)]
pub struct CharGrid {
    pub geometry: GridGeometry,
    /// `values[(i, j)]` estimates `chi(geometry.point(i, j))`.
    pub values: DMatrix<C64>,
    pub status: DMatrix<CellStatus>,
    pub warnings: Vec<String>,
}

impl CharGrid {
    /// Wraps an already gridded field, e.g. a known function sampled on the
    /// grid. All cells count as resolved.
    pub fn from_values(geometry: GridGeometry, values: DMatrix<C64>) -> Result<Self> {
        if values.nrows() != geometry.n() || values.ncols() != geometry.n() {
            return Err(Error::InvalidDimension {
                dim: values.nrows(),
                reason: "value matrix does not match grid side",
            });
        }
        Ok(Self {
            geometry,
            status: DMatrix::from_element(geometry.n(), geometry.n(), CellStatus::Resolved),
            values,
            warnings: Vec::new(),
        })
    }

    pub fn count(&self, status: CellStatus) -> usize {
        self.status.iter().filter(|s| **s == status).count()
    }

    /// Largest `|chi(lambda) - conj chi(-lambda)|` over the grid.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.geometry.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = self.values[(i, j)] - self.values[(n - 1 - i, n - 1 - j)].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// `chi(lambda) <- (chi(lambda) + conj chi(-lambda)) / 2`
    pub fn symmetrize(&mut self) {
        let n = self.geometry.n();
        let old = self.values.clone();
        for i in 0..n {
            for j in 0..n {
                self.values[(i, j)] = (old[(i, j)] + old[(n - 1 - i, n - 1 - j)].conj()) * 0.5;
            }
        }
    }
}

/// Median step between consecutive samples, ignoring coincident pairs.
fn typical_spacing(samples: &[CharSample]) -> Option<f64> {
    let mut steps: Vec<f64> = samples
        .windows(2)
        .map(|w| (w[1].lambda - w[0].lambda).norm())
        .filter(|d| *d > ORIGIN_TOL)
        .collect();
    if steps.is_empty() {
        return None;
    }
    steps.sort_by(f64::total_cmp);
    Some(steps[steps.len() / 2])
}

/// Scatters samples onto an origin-centred grid.
///
/// Each sample spreads over its four surrounding nodes with bilinear
/// weights times its own weight. At every node a weighted fit
/// `chi ~ c0 + c1 dx + c2 dy` is attempted; if the samples do not span both
/// directions the node falls back to the weighted mean. Nodes with too
/// little weight are filled from the nearest covered node. The result is
/// Hermitian-symmetrised.
pub fn grid_char(samples: &[CharSample], geometry: GridGeometry, options: GridOptions) -> Result<CharGrid> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("characteristic-function samples"));
    }
    if geometry.center() != C64::new(0.0, 0.0) {
        return Err(Error::InvalidParameter {
            name: "center",
            reason: "characteristic-function grids must be centred on the origin".into(),
        });
    }
    let n = geometry.n();
    let h = geometry.spacing();
    let hw = geometry.half_width();
    let finite_weights: Vec<f64> = samples.iter().map(|s| s.weight).filter(|w| w.is_finite()).collect();
    let mean_weight = if finite_weights.is_empty() {
        1.0
    } else {
        finite_weights.iter().sum::<f64>() / finite_weights.len() as f64
    };

    let mut normal = vec![Matrix3::<f64>::zeros(); n * n];
    let mut rhs = vec![Vector3::<C64>::zeros(); n * n];
    let mut den = vec![0.0f64; n * n];
    let mut outside = 0usize;
    for s in samples {
        let fx = (s.lambda.re + hw) / h;
        let fy = (s.lambda.im + hw) / h;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (n - 1) as f64 && fy <= (n - 1) as f64) {
            outside += 1;
            continue;
        }
        let i0 = (fx.floor() as usize).min(n - 2);
        let j0 = (fy.floor() as usize).min(n - 2);
        let (dx, dy) = (fx - i0 as f64, fy - j0 as f64);
        let w_sample = if s.weight.is_finite() { s.weight } else { mean_weight * 1e12 };
        for (di, wx) in [(0usize, 1.0 - dx), (1, dx)] {
            for (dj, wy) in [(0usize, 1.0 - dy), (1, dy)] {
                let w = wx * wy * w_sample;
                if w == 0.0 {
                    continue;
                }
                let phi = Vector3::new(1.0, dx - di as f64, dy - dj as f64);
                let k = (i0 + di) * n + (j0 + dj);
                normal[k] += phi * phi.transpose() * w;
                rhs[k] += phi.map(|p| C64::new(p * w, 0.0)) * s.chi_hat;
                den[k] += w;
            }
        }
    }

    let mut values = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    let mut status = DMatrix::from_element(n, n, CellStatus::Filled);
    let threshold = options.w_min * mean_weight;
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if den[k] < threshold || den[k] == 0.0 {
                continue;
            }
            let eig = SymmetricEigen::new(normal[k]).eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            if lo >= options.fit_condition * hi {
                if let Some(inv) = normal[k].try_inverse() {
                    let inv = inv.map(|x| C64::new(x, 0.0));
                    values[(i, j)] = (inv * rhs[k])[0];
                    status[(i, j)] = CellStatus::Resolved;
                    continue;
                }
            }
            values[(i, j)] = rhs[k][0] / den[k];
            status[(i, j)] = CellStatus::Sampled;
        }
    }

    let mut warnings = Vec::new();
    let covered = status.iter().filter(|s| s.is_covered()).count();
    if covered == 0 {
        return Err(Error::EmptyInput("covered grid cells"));
    }
    let nearest = nearest_covered(&status);
    let mut filled = 0usize;
    for i in 0..n {
        for j in 0..n {
            if status[(i, j)].is_covered() {
                continue;
            }
            let (ki, kj) = nearest[i * n + j];
            let here = geometry.point(i, j).norm_sqr();
            let there = geometry.point(ki, kj).norm_sqr();
            values[(i, j)] = values[(ki, kj)] * (-(here - there) / 2.0).exp();
            filled += 1;
        }
    }
    if filled > 0 {
        warnings.push(format!(
            "{filled} of {} cells carry no samples; filled by Gaussian-damped nearest neighbour (biases toward smooth states)",
            n * n
        ));
    }
    if outside > 0 {
        warnings.push(format!("{outside} samples outside the grid were ignored"));
    }
    if let Some(step) = typical_spacing(samples) {
        if h * std::f64::consts::SQRT_2 > 4.0 * step {
            warnings.push(format!(
                "grid too coarse: cell diagonal {:.3e} exceeds 4x the sample spacing {step:.3e}",
                h * std::f64::consts::SQRT_2
            ));
        }
    }

    let mut grid = CharGrid {
        geometry,
        values,
        status,
        warnings,
    };
    grid.symmetrize();
    Ok(grid)
}

/// For every cell, the Euclidean-nearest covered cell (exact distance
/// transform with feature tracking; ties resolve to the lower index).
fn nearest_covered(status: &DMatrix<CellStatus>) -> Vec<(usize, usize)> {
    let n = status.nrows();
    const FAR: f64 = 1e30;
    // column pass: nearest covered row within each column j
    let mut col_nearest = vec![None::<usize>; n * n];
    for j in 0..n {
        let mut last = None;
        for i in 0..n {
            if status[(i, j)].is_covered() {
                last = Some(i);
            }
            col_nearest[i * n + j] = last;
        }
        let mut next = None;
        for i in (0..n).rev() {
            if status[(i, j)].is_covered() {
                next = Some(i);
            }
            let best = match (col_nearest[i * n + j], next) {
                (Some(a), Some(b)) => Some(if i - a <= b - i { a } else { b }),
                (a, b) => a.or(b),
            };
            col_nearest[i * n + j] = best;
        }
    }
    // row pass: lower envelope of parabolas (j - q)^2 + f(q)
    let mut out = vec![(0usize, 0usize); n * n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    for i in 0..n {
        let f = |q: usize| match col_nearest[i * n + q] {
            Some(r) => {
                let d = r as f64 - i as f64;
                d * d
            }
            None => FAR,
        };
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            let fq = f(q) + (q * q) as f64;
            let mut s;
            loop {
                let p = v[k];
                s = (fq - (f(p) + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                // z[0] is -inf, so k never underflows
                if s <= z[k] {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        let mut k = 0usize;
        for j in 0..n {
            while z[k + 1] < j as f64 {
                k += 1;
            }
            let q = v[k];
            let row = col_nearest[i * n + q].unwrap_or(i);
            out[i * n + j] = (row, q);
        }
    }
    out
}

/// A real Wigner function on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    geometry: GridGeometry,
    /// `values[(i, j)] = W(geometry.point(i, j))`
    values: DMatrix<f64>,
    convention_tag: &'static str,
}

impl WignerGrid {
    pub fn new(geometry: GridGeometry, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != geometry.n() || values.ncols() != geometry.n() {
            return Err(Error::InvalidDimension {
                dim: values.nrows(),
                reason: "value matrix does not match grid side",
            });
        }
        Ok(Self {
            geometry,
            values,
            convention_tag: WIGNER_CONVENTION,
        })
    }

    /// Displaced-parity Wigner values of a known state on `geometry`.
    pub fn reference(probe: &PhaseSpaceProbe, geometry: GridGeometry) -> Result<Self> {
        let n = geometry.n();
        let mut values = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                values[(i, j)] = probe.wigner(geometry.point(i, j))?;
            }
        }
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn convention_tag(&self) -> &'static str {
        self.convention_tag
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    /// Riemann sum of `W` over the grid.
    pub fn total_mass(&self) -> f64 {
        self.values.sum() * self.geometry.cell_area()
    }

    /// Largest `|W - other|` over points where `keep(beta)` holds.
    pub fn max_abs_diff_where<F: Fn(C64) -> bool>(&self, other: &WignerGrid, keep: F) -> Result<f64> {
        if self.geometry != other.geometry {
            return Err(Error::InvalidParameter {
                name: "geometry",
                reason: "Wigner grids differ in geometry".into(),
            });
        }
        let n = self.geometry.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if keep(self.geometry.point(i, j)) {
                    worst = worst.max((self.values[(i, j)] - other.values[(i, j)]).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// `W(beta) = (1/pi^2) sum_cells chi(lambda) e^{beta lambda^* - beta^* lambda} h^2`.
///
/// With `beta = a + ib` and `lambda = x + iy` the kernel is
/// `e^{2i(b x - a y)}`, so the double sum factorises into two matrix
/// products.
pub fn wigner_from_char(grid: &CharGrid, output: GridGeometry) -> Result<WignerGrid> {
    let scale = grid.values.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let defect = grid.symmetry_defect();
    if defect > 1e-12 * scale {
        return Err(Error::NotSymmetrized { defect });
    }
    let g = &grid.geometry;
    let (n, m) = (g.n(), output.n());
    let xs: Vec<f64> = (0..n).map(|k| g.offset(k)).collect();
    let re: Vec<f64> = (0..m).map(|k| output.point(k, 0).re).collect();
    let im: Vec<f64> = (0..m).map(|k| output.point(0, k).im).collect();
    // e1[(b, i)] = e^{2i b x_i}, e2[(a, j)] = e^{-2i a y_j}
    let e1 = DMatrix::from_fn(m, n, |b, i| C64::from_polar(1.0, 2.0 * im[b] * xs[i]));
    let e2 = DMatrix::from_fn(m, n, |a, j| C64::from_polar(1.0, -2.0 * re[a] * xs[j]));
    let partial = &e1 * &grid.values;
    let w = e2 * partial.transpose() * C64::new(g.cell_area() / (PI * PI), 0.0);
    let residue = w.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > IMAG_RESIDUE_TOL {
        return Err(Error::NonRealResult { residue });
    }
    WignerGrid::new(output, w.map(|z| z.re))
}
