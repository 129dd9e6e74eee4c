//! The field/mirror Hamiltonian `H = w a^dag a + W b^dag b - g a^dag a (b + b^dag)`
//! (hbar = 1), two independent evolution engines, and field quadrature
//! records.
//!
//! Joint vectors are flattened with the field index slow and the mirror
//! index fast. All frequencies are angular.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fock::{leakage, resolved_levels, DensityMatrix, Displacer, Mode, OperatorMatrix, Space, Spectrum, StateVector};
use crate::states::{coherent_state_with_leakage, mirror_ensemble, MirrorFamily, MirrorStateSpec, LEAKAGE_WARN};
use crate::C64;

/// Reduced Planck constant in J s, used only when deriving `g` from cavity
/// length and mirror mass.
pub const HBAR_SI: f64 = 1.054571817e-34;

/// Default number of time samples per mirror period.
pub const STEPS_PER_PERIOD: usize = 256;

/// Truncation leakage above which a run carries a warning.
pub const LEAKAGE_TOL: f64 = 1e-10;

/// Poisson tail mass neglected when sizing the mirror space.
const POISSON_TAIL: f64 = 1e-10;

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

/// `g = (w / L) sqrt(hbar / (2 m W))` in rad/s.
pub fn derive_coupling(omega_field: f64, length: f64, mass: f64, omega_mirror: f64) -> Result<f64> {
    positive("omega", omega_field)?;
    positive("L", length)?;
    positive("m", mass)?;
    positive("Omega", omega_mirror)?;
    Ok(omega_field / length * (HBAR_SI / (2.0 * mass * omega_mirror)).sqrt())
}

/// Reference frame for the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Frame {
    Lab,
    /// Frame rotating at the field frequency: the `w a^dag a` term is dropped.
    #[default]
    RotatingAtOmega,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Lab => "lab",
            Frame::RotatingAtOmega => "rotating_at_omega",
        })
    }
}

impl FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lab" => Ok(Frame::Lab),
            "rotating_at_omega" => Ok(Frame::RotatingAtOmega),
            other => Err(Error::Parse(format!("unknown frame `{other}`"))),
        }
    }
}

/// Physical parameters of one protocol run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    omega_field: f64,
    omega_mirror: f64,
    coupling: f64,
    alpha: C64,
    frame: Frame,
    eta: f64,
    epsilon: f64,
}

impl SystemParams {
    pub fn new(omega_field: f64, omega_mirror: f64, coupling: f64, alpha: C64, frame: Frame) -> Result<Self> {
        positive("Omega", omega_mirror)?;
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "g",
                reason: format!("must be nonnegative and finite, got {coupling}"),
            });
        }
        if !omega_field.is_finite() {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: "must be finite".into(),
            });
        }
        if !(alpha.re.is_finite() && alpha.im.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "must be finite".into(),
            });
        }
        let eta = coupling / omega_mirror;
        Ok(Self {
            omega_field,
            omega_mirror,
            coupling,
            alpha,
            frame,
            eta,
            epsilon: coupling * eta,
        })
    }

    /// Parameters with `g` derived from cavity length and mirror mass.
    pub fn from_cavity(omega_field: f64, omega_mirror: f64, length: f64, mass: f64, alpha: C64, frame: Frame) -> Result<Self> {
        let g = derive_coupling(omega_field, length, mass, omega_mirror)?;
        Self::new(omega_field, omega_mirror, g, alpha, frame)
    }

    /// Same system with the coupling rescaled so that `g / W = eta`.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(self.omega_field, self.omega_mirror, eta * self.omega_mirror, self.alpha, self.frame)
    }

    pub fn with_alpha(&self, alpha: C64) -> Result<Self> {
        Self::new(self.omega_field, self.omega_mirror, self.coupling, alpha, self.frame)
    }

    pub fn with_frame(&self, frame: Frame) -> Self {
        Self { frame, ..*self }
    }

    pub fn omega_field(&self) -> f64 {
        self.omega_field
    }

    pub fn omega_mirror(&self) -> f64 {
        self.omega_mirror
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    /// `g / W`
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `g eta = g^2 / W`
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Field frequency in the working frame.
    pub fn omega_effective(&self) -> f64 {
        match self.frame {
            Frame::Lab => self.omega_field,
            Frame::RotatingAtOmega => 0.0,
        }
    }

    /// One mirror period `2 pi / W`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_mirror
    }
}

/// Field and mirror truncation dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Truncation {
    pub field_dim: usize,
    pub mirror_dim: usize,
}

impl Truncation {
    pub fn new(field_dim: usize, mirror_dim: usize) -> Result<Self> {
        for dim in [field_dim, mirror_dim] {
            if dim < 2 {
                return Err(Error::InvalidDimension {
                    dim,
                    reason: "truncation dimensions must be at least 2",
                });
            }
        }
        Ok(Self { field_dim, mirror_dim })
    }

    /// `ceil(|alpha|^2 + 6|alpha|) + 10` field levels.
    pub fn auto_field_dim(alpha: C64) -> usize {
        let r = alpha.norm();
        (r * r + 6.0 * r).ceil() as usize + 10
    }

    /// Default dimensions for a run: [`Truncation::auto_field_dim`] field
    /// levels and [`Truncation::mirror_dim_for`] mirror levels, where `n_max`
    /// is the highest field level with non-negligible Poisson population.
    pub fn auto(params: &SystemParams, mirror: &MirrorFamily) -> Self {
        let field_dim = Self::auto_field_dim(params.alpha());
        let n_eff = poisson_support(params.alpha().norm_sqr(), POISSON_TAIL).min(field_dim - 1);
        Self {
            field_dim,
            mirror_dim: Self::mirror_dim_for(n_eff, params.eta(), mirror.extent()),
        }
    }

    /// Mirror levels needed when field levels up to `n_max` act on a mirror
    /// state of amplitude radius `r0`.
    ///
    /// Field level `n` displaces the mirror by up to `2 eta n`, so the state
    /// reaches radius `r = 2 eta n_max + r0`; the space keeps
    /// `ceil(r^2) + ceil(5 r) + 20` levels, and never fewer than `4 r0^2`.
    pub fn mirror_dim_for(n_max: usize, eta: f64, r0: f64) -> usize {
        let r = 2.0 * eta * n_max as f64 + r0;
        ((r * r).ceil() as usize + (5.0 * r).ceil() as usize + 20).max((4.0 * r0 * r0).ceil() as usize)
    }

    pub fn joint_dim(&self) -> usize {
        self.field_dim * self.mirror_dim
    }

    pub fn space(&self) -> Space {
        Space::Joint {
            field: self.field_dim,
            mirror: self.mirror_dim,
        }
    }
}

/// Smallest `n` with `P(N > n) < tail` for `N ~ Poisson(mean)`.
fn poisson_support(mean: f64, tail: f64) -> usize {
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut n = 0;
    while 1.0 - cdf >= tail && n < 10_000 {
        n += 1;
        p *= mean / n as f64;
        cdf += p;
    }
    n
}

/// The joint Hamiltonian on `field_dim x mirror_dim` levels. The `w a^dag a`
/// term is dropped in the rotating frame.
pub fn hamiltonian(params: &SystemParams, field_dim: usize, mirror_dim: usize) -> Result<OperatorMatrix> {
    let trunc = Truncation::new(field_dim, mirror_dim)?;
    let dim = trunc.joint_dim();
    let mut h = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
    for n in 0..field_dim {
        h.view_mut((n * mirror_dim, n * mirror_dim), (mirror_dim, mirror_dim))
            .copy_from(&hamiltonian_sector(params, n, mirror_dim));
    }
    OperatorMatrix::new(trunc.space(), h)
}

/// The block of `H` with `n` photons; `H` conserves the photon number.
pub fn hamiltonian_sector(params: &SystemParams, n: usize, mirror_dim: usize) -> DMatrix<C64> {
    let (w, big_w, g) = (params.omega_effective(), params.omega_mirror(), params.coupling());
    let mut h = DMatrix::from_element(mirror_dim, mirror_dim, C64::new(0.0, 0.0));
    for m in 0..mirror_dim {
        h[(m, m)] = C64::new(w * n as f64 + big_w * m as f64, 0.0);
        if m + 1 < mirror_dim {
            let x = C64::new(-g * n as f64 * ((m + 1) as f64).sqrt(), 0.0);
            h[(m + 1, m)] = x;
            h[(m, m + 1)] = x;
        }
    }
    h
}

/// Max-norm defect of the polaron form `H = D(eta N) H0 D(eta N)^dag` with
/// `H0 = w N + W b^dag b - eps N^2`, on the block where truncation does not
/// reach: the lowest `field_dim - 2` field levels, and mirror levels resolved
/// under the largest displacement those field levels need.
pub fn polaron_identity_defect(params: &SystemParams, field_dim: usize, mirror_dim: usize) -> Result<f64> {
    let field_interior = field_dim.saturating_sub(2).max(1);
    let shift = params.eta() * (field_interior - 1) as f64;
    let mirror_interior = resolved_levels(mirror_dim, shift);
    if mirror_interior == 0 {
        return Err(Error::InvalidDimension {
            dim: mirror_dim,
            reason: "mirror space too small to resolve the polaron displacement",
        });
    }
    polaron_identity_defect_on(params, field_dim, mirror_dim, field_interior, mirror_interior)
}

/// As [`polaron_identity_defect`] with an explicit interior block of
/// `field_interior x mirror_interior` levels.
pub fn polaron_identity_defect_on(
    params: &SystemParams,
    field_dim: usize,
    mirror_dim: usize,
    field_interior: usize,
    mirror_interior: usize,
) -> Result<f64> {
    let trunc = Truncation::new(field_dim, mirror_dim)?;
    if field_interior > field_dim || mirror_interior > mirror_dim {
        return Err(Error::InvalidDimension {
            dim: field_interior.max(mirror_interior),
            reason: "interior block exceeds the truncated space",
        });
    }
    let h = hamiltonian(params, trunc.field_dim, trunc.mirror_dim)?;
    let displacer = Displacer::new(Mode::Mirror, mirror_dim)?;
    let (w, big_w, eps, eta) = (params.omega_effective(), params.omega_mirror(), params.epsilon(), params.eta());
    let mut defect: f64 = 0.0;
    for n in 0..field_interior {
        let nf = n as f64;
        let d = displacer.matrix(C64::new(eta * nf, 0.0))?.into_entries();
        let h0 = DVector::from_fn(mirror_dim, |m, _| C64::new(w * nf + big_w * m as f64 - eps * nf * nf, 0.0));
        let rhs = &d * DMatrix::from_diagonal(&h0) * d.adjoint();
        let off = n * mirror_dim;
        for i in 0..mirror_interior {
            for j in 0..mirror_interior {
                defect = defect.max((h.entries()[(off + i, off + j)] - rhs[(i, j)]).norm());
            }
        }
    }
    Ok(defect)
}

/// Which propagator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineKind {
    /// Exponentiation of the joint Hamiltonian.
    Brute,
    /// Polaron-factored propagator, one mirror-space product per field level.
    Factored,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Brute => "brute",
            EngineKind::Factored => "factored",
        })
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(EngineKind::Brute),
            "factored" => Ok(EngineKind::Factored),
            other => Err(Error::Parse(format!("unknown engine `{other}`"))),
        }
    }
}

fn check_joint(psi: &StateVector, trunc: &Truncation) -> Result<()> {
    if psi.space() != trunc.space() {
        return Err(Error::SpaceMismatch {
            expected: trunc.space(),
            found: psi.space(),
        });
    }
    Ok(())
}

fn joint_truncation(psi: &StateVector) -> Result<Truncation> {
    let (f, m) = psi.space().joint_dims().ok_or(Error::SpaceMismatch {
        expected: Space::Joint { field: 0, mirror: 0 },
        found: psi.space(),
    })?;
    Truncation::new(f, m)
}

/// `exp(-i H t)` through the eigen-decomposition of the joint Hamiltonian.
#[derive(Debug, Clone)]
pub struct BruteEngine {
    trunc: Truncation,
    spectrum: Spectrum,
}

impl BruteEngine {
    pub fn new(params: &SystemParams, trunc: Truncation) -> Result<Self> {
        let trunc = Truncation::new(trunc.field_dim, trunc.mirror_dim)?;
        let sectors: Vec<_> = (0..trunc.field_dim)
            .map(|n| hamiltonian_sector(params, n, trunc.mirror_dim))
            .collect();
        Ok(Self {
            trunc,
            spectrum: Spectrum::of_hermitian_sectors(&sectors)?,
        })
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn evolve(&self, psi0: &StateVector, t: f64) -> Result<StateVector> {
        check_joint(psi0, &self.trunc)?;
        Ok(StateVector::from_raw(psi0.space(), self.spectrum.evolve(psi0.entries(), t)))
    }

    /// States at every time in `times`, sharing the eigenbasis projection.
    pub fn evolve_many(&self, psi0: &StateVector, times: &[f64]) -> Result<Vec<StateVector>> {
        check_joint(psi0, &self.trunc)?;
        Ok(self
            .spectrum
            .evolve_many(psi0.entries(), times)
            .into_iter()
            .map(|v| StateVector::from_raw(psi0.space(), v))
            .collect())
    }
}

/// Polaron-factored propagator. Field level `n` evolves its mirror block by
/// `D(eta n) exp(-i t (W b^dag b + w n - eps n^2)) D(-eta n)`.
#[derive(Debug, Clone)]
pub struct FactoredEngine {
    params: SystemParams,
    trunc: Truncation,
    displacer: Displacer,
}

/// An initial state with the `D(-eta n)` stage already applied per block.
#[derive(Debug, Clone)]
pub struct PreparedState {
    space: Space,
    blocks: Vec<Option<DVector<C64>>>,
}

impl FactoredEngine {
    pub fn new(params: &SystemParams, trunc: Truncation) -> Result<Self> {
        Ok(Self {
            params: *params,
            trunc,
            displacer: Displacer::new(Mode::Mirror, trunc.mirror_dim)?,
        })
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    fn shift(&self, n: usize) -> C64 {
        C64::new(self.params.eta() * n as f64, 0.0)
    }

    /// Applies the time-independent first stage. Blocks that are exactly
    /// zero are skipped.
    pub fn prepare(&self, psi0: &StateVector) -> Result<PreparedState> {
        check_joint(psi0, &self.trunc)?;
        let md = self.trunc.mirror_dim;
        let blocks = (0..self.trunc.field_dim)
            .map(|n| {
                let block = psi0.entries().rows(n * md, md).into_owned();
                if block.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                    Ok(None)
                } else {
                    self.displacer.apply(-self.shift(n), &block).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        Ok(PreparedState {
            space: psi0.space(),
            blocks,
        })
    }

    pub fn evolve_prepared(&self, prepared: &PreparedState, t: f64) -> Result<StateVector> {
        let md = self.trunc.mirror_dim;
        let (w, big_w, eps) = (self.params.omega_effective(), self.params.omega_mirror(), self.params.epsilon());
        let mut out = DVector::from_element(self.trunc.joint_dim(), C64::new(0.0, 0.0));
        for (n, block) in prepared.blocks.iter().enumerate() {
            let Some(block) = block else { continue };
            let nf = n as f64;
            let scalar = -t * (w * nf - eps * nf * nf);
            let rotated = DVector::from_fn(md, |m, _| block[m] * C64::from_polar(1.0, scalar - big_w * t * m as f64));
            let evolved = self.displacer.apply(self.shift(n), &rotated)?;
            out.rows_mut(n * md, md).copy_from(&evolved);
        }
        Ok(StateVector::from_raw(prepared.space, out))
    }

    pub fn evolve(&self, psi0: &StateVector, t: f64) -> Result<StateVector> {
        self.evolve_prepared(&self.prepare(psi0)?, t)
    }
}

/// One-shot brute-force evolution; dimensions are read from `psi0`.
pub fn evolve_brute(psi0: &StateVector, params: &SystemParams, t: f64) -> Result<StateVector> {
    BruteEngine::new(params, joint_truncation(psi0)?)?.evolve(psi0, t)
}

/// One-shot factored evolution; dimensions are read from `psi0`.
pub fn evolve_factored(psi0: &StateVector, params: &SystemParams, t: f64) -> Result<StateVector> {
    FactoredEngine::new(params, joint_truncation(psi0)?)?.evolve(psi0, t)
}

/// A joint state handed to [`quadratures`].
#[derive(Debug, Clone)]
pub enum JointState {
    Pure(StateVector),
    /// Weighted pure components; weights must sum to one.
    Mixture(Vec<(f64, StateVector)>),
    Density(DensityMatrix),
}

/// Field moments `<a>`, `<a^2>` and `<a^dag a>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldMoments {
    pub a: C64,
    pub a2: C64,
    pub n: f64,
}

impl FieldMoments {
    fn from_field_density(rho: &DMatrix<C64>) -> Self {
        let fd = rho.nrows();
        let mut m = FieldMoments {
            a: C64::new(0.0, 0.0),
            a2: C64::new(0.0, 0.0),
            n: 0.0,
        };
        // Tr[rho a] = sum_n sqrt(n) rho[n, n-1]
        for n in 1..fd {
            m.a += rho[(n, n - 1)] * (n as f64).sqrt();
            m.n += rho[(n, n)].re * n as f64;
            if n >= 2 {
                m.a2 += rho[(n, n - 2)] * ((n * (n - 1)) as f64).sqrt();
            }
        }
        m
    }

    pub fn of_pure(psi: &StateVector) -> Result<Self> {
        let (fd, md) = joint_truncation(psi).map(|t| (t.field_dim, t.mirror_dim))?;
        let amp = DMatrix::from_fn(fd, md, |n, m| psi.entries()[n * md + m]);
        Ok(Self::from_field_density(&(&amp * amp.adjoint())))
    }

    pub fn of_density(rho: &DensityMatrix) -> Result<Self> {
        let reduced = crate::fock::partial_trace(rho, Mode::Field)?;
        Ok(Self::from_field_density(reduced.entries()))
    }

    pub fn of_state(state: &JointState) -> Result<Self> {
        match state {
            JointState::Pure(psi) => Self::of_pure(psi),
            JointState::Density(rho) => Self::of_density(rho),
            JointState::Mixture(parts) => {
                let mut acc = FieldMoments {
                    a: C64::new(0.0, 0.0),
                    a2: C64::new(0.0, 0.0),
                    n: 0.0,
                };
                for (p, psi) in parts {
                    acc = acc.add_weighted(&Self::of_pure(psi)?, *p);
                }
                Ok(acc)
            }
        }
    }

    fn add_weighted(&self, other: &Self, p: f64) -> Self {
        FieldMoments {
            a: self.a + other.a * p,
            a2: self.a2 + other.a2 * p,
            n: self.n + other.n * p,
        }
    }

    /// Noiseless quadrature record. `<a a^dag>` is taken as `<N> + 1`, which
    /// avoids the truncated commutator at the top field level.
    pub fn record(&self, t: f64) -> QuadratureRecord {
        let x_mean = SQRT_2 * self.a.re;
        let y_mean = SQRT_2 * self.a.im;
        let x_var = (2.0 * self.a2.re + 2.0 * self.n + 1.0) / 2.0 - x_mean * x_mean;
        let y_var = (-2.0 * self.a2.re + 2.0 * self.n + 1.0) / 2.0 - y_mean * y_mean;
        QuadratureRecord {
            t,
            x_mean,
            y_mean,
            x_var,
            y_var,
            a_mean: self.a,
            shots: None,
            noisy: false,
        }
    }
}

/// Homodyne statistics of the field at one time,
/// `X = (a + a^dag)/sqrt 2`, `Y = -i (a - a^dag)/sqrt 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRecord {
    pub t: f64,
    pub x_mean: f64,
    pub y_mean: f64,
    pub x_var: f64,
    pub y_var: f64,
    /// `(x_mean + i y_mean) / sqrt 2`
    pub a_mean: C64,
    pub shots: Option<u64>,
    pub noisy: bool,
}

/// Finite-sample homodyne noise: each mean is estimated from `shots`
/// Gaussian draws. Draws for record `index` depend only on `(seed, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShotNoise {
    pub shots: u64,
    pub seed: u64,
}

impl ShotNoise {
    pub fn new(shots: u64, seed: u64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidParameter {
                name: "shots",
                reason: "must be positive".into(),
            });
        }
        Ok(Self { shots, seed })
    }

    fn normals(&self, index: u64) -> (f64, f64) {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
    }
}

impl QuadratureRecord {
    /// Assembles a record from measured means and variances.
    pub fn from_measurement(t: f64, x_mean: f64, y_mean: f64, x_var: f64, y_var: f64, shots: Option<u64>) -> Self {
        Self {
            t,
            x_mean,
            y_mean,
            x_var,
            y_var,
            a_mean: C64::new(x_mean, y_mean) / SQRT_2,
            shots,
            noisy: shots.is_some(),
        }
    }

    /// The record with its means replaced by `mean + xi sqrt(var / shots)`.
    pub fn with_shot_noise(&self, noise: &ShotNoise, index: u64) -> Result<Self> {
        if noise.shots == 0 {
            return Err(Error::InvalidParameter {
                name: "shots",
                reason: "must be positive".into(),
            });
        }
        let (xi_x, xi_y) = noise.normals(index);
        let shots = noise.shots as f64;
        let x_mean = self.x_mean + xi_x * (self.x_var.max(0.0) / shots).sqrt();
        let y_mean = self.y_mean + xi_y * (self.y_var.max(0.0) / shots).sqrt();
        Ok(Self::from_measurement(self.t, x_mean, y_mean, self.x_var, self.y_var, Some(noise.shots)))
    }
}

/// Field quadratures of `state` at time `t`, optionally with shot noise keyed
/// by `index`.
pub fn quadratures(state: &JointState, t: f64, noise: Option<(&ShotNoise, u64)>) -> Result<QuadratureRecord> {
    let record = FieldMoments::of_state(state)?.record(t);
    match noise {
        Some((noise, index)) => record.with_shot_noise(noise, index),
        None => Ok(record),
    }
}

/// `steps + 1` uniformly spaced times on `[0, t_max]`.
pub fn uniform_times(t_max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "t_max",
            reason: format!("must be nonnegative and finite, got {t_max}"),
        });
    }
    if steps == 0 {
        return Ok(vec![0.0]);
    }
    Ok((0..=steps).map(|k| t_max * k as f64 / steps as f64).collect())
}

/// One mirror period sampled at [`STEPS_PER_PERIOD`] steps.
pub fn default_times(params: &SystemParams) -> Vec<f64> {
    (0..=STEPS_PER_PERIOD)
        .map(|k| params.period() * k as f64 / STEPS_PER_PERIOD as f64)
        .collect()
}

/// Provenance of a simulated record list.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub engine: EngineKind,
    pub frame: Frame,
    pub truncation: Truncation,
    pub eta: f64,
    /// Norm lost truncating the initial coherent field state.
    pub coherent_leakage: f64,
    /// Largest top-two-level population seen along the evolution.
    pub leakage: f64,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub records: Vec<QuadratureRecord>,
    pub meta: RunMeta,
}

enum Engine {
    Brute(BruteEngine),
    Factored(FactoredEngine, Vec<PreparedState>),
}

/// Runs the measurement protocol: coherent field `|alpha>`, mirror `mirror`
/// re-truncated to `trunc.mirror_dim`, one quadrature record per time.
/// Mixed mirror states are evolved component by component.
pub fn simulate_protocol(
    params: &SystemParams,
    mirror: &MirrorStateSpec,
    times: &[f64],
    engine: EngineKind,
    trunc: Truncation,
    noise: Option<ShotNoise>,
) -> Result<ProtocolRun> {
    if times.is_empty() {
        return Err(Error::EmptyInput("time grid"));
    }
    let mirror = mirror.with_dim(trunc.mirror_dim)?;
    let (field, coherent_leakage) = coherent_state_with_leakage(params.alpha(), Mode::Field, trunc.field_dim)?;
    let initial: Vec<(f64, StateVector)> = mirror_ensemble(&mirror)?
        .into_iter()
        .map(|(p, phi)| crate::fock::tensor(&field, &phi).map(|psi| (p, psi)))
        .collect::<Result<_>>()?;

    let runner = match engine {
        EngineKind::Brute => Engine::Brute(BruteEngine::new(params, trunc)?),
        EngineKind::Factored => {
            let eng = FactoredEngine::new(params, trunc)?;
            let prepared = initial.iter().map(|(_, psi)| eng.prepare(psi)).collect::<Result<_>>()?;
            Engine::Factored(eng, prepared)
        }
    };

    let zero = FieldMoments {
        a: C64::new(0.0, 0.0),
        a2: C64::new(0.0, 0.0),
        n: 0.0,
    };
    let mut moments = vec![zero; times.len()];
    let mut max_leak: f64 = 0.0;
    for (k, (p, psi0)) in initial.iter().enumerate() {
        let mut accumulate = |i: usize, psi: StateVector| -> Result<()> {
            max_leak = max_leak.max(leakage(&psi));
            moments[i] = moments[i].add_weighted(&FieldMoments::of_pure(&psi)?, *p);
            Ok(())
        };
        match &runner {
            Engine::Brute(eng) => {
                for (i, psi) in eng.evolve_many(psi0, times)?.into_iter().enumerate() {
                    accumulate(i, psi)?;
                }
            }
            Engine::Factored(eng, prepared) => {
                for (i, &t) in times.iter().enumerate() {
                    accumulate(i, eng.evolve_prepared(&prepared[k], t)?)?;
                }
            }
        }
    }
    let records = moments
        .iter()
        .zip(times)
        .enumerate()
        .map(|(index, (m, &t))| match &noise {
            Some(noise) => m.record(t).with_shot_noise(noise, index as u64),
            None => Ok(m.record(t)),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    if coherent_leakage >= LEAKAGE_WARN {
        warnings.push(format!("coherent field truncation leakage {coherent_leakage:e}"));
    }
    if max_leak >= LEAKAGE_TOL {
        warnings.push(format!("top-level population {max_leak:e} exceeds {LEAKAGE_TOL:e}"));
    }
    Ok(ProtocolRun {
        records,
        meta: RunMeta {
            engine,
            frame: params.frame(),
            truncation: trunc,
            eta: params.eta(),
            coherent_leakage,
            leakage: max_leak,
            shots: noise.map(|n| n.shots),
            seed: noise.map(|n| n.seed),
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{reduce_pure, tensor};
    use crate::states::coherent_state;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn params(eta: f64, alpha: C64) -> SystemParams {
        SystemParams::new(0.0, 1.0, eta, alpha, Frame::RotatingAtOmega).unwrap()
    }

    #[test]
    fn coupling_scaling() {
        let g = derive_coupling(1e16, 1.0, 1e-5, 2e3 * PI).unwrap();
        let g_heavy = derive_coupling(1e16, 1.0, 2e-5, 2e3 * PI).unwrap();
        let g_long = derive_coupling(1e16, 2.0, 1e-5, 2e3 * PI).unwrap();
        assert!((g_heavy / g - 1.0 / SQRT_2).abs() < 1e-14);
        assert!((g_long / g - 0.5).abs() < 1e-14);
        assert!(derive_coupling(1e16, 1.0, -1e-5, 1e3).is_err());
    }

    #[test]
    fn stored_derived_quantities() {
        let p = SystemParams::new(3.0, 2.0, 0.5, c(1.0, 0.0), Frame::Lab).unwrap();
        assert_eq!(p.eta(), 0.25);
        assert_eq!(p.epsilon(), 0.125);
        assert_eq!(p.omega_effective(), 3.0);
        assert_eq!(p.with_frame(Frame::RotatingAtOmega).omega_effective(), 0.0);
        assert!(SystemParams::new(1.0, 0.0, 0.1, c(1.0, 0.0), Frame::Lab).is_err());
        assert!(SystemParams::new(1.0, 1.0, -0.1, c(1.0, 0.0), Frame::Lab).is_err());
    }

    #[test]
    fn hamiltonian_elements() {
        let p = SystemParams::new(1.3, 0.7, 0.2, c(1.0, 0.0), Frame::Lab).unwrap();
        let (fd, md) = (4, 5);
        let h = hamiltonian(&p, fd, md).unwrap();
        assert!(h.is_hermitian(0.0));
        for n in 0..fd {
            for m in 0..md {
                let i = n * md + m;
                assert!((h.entries()[(i, i)].re - (1.3 * n as f64 + 0.7 * m as f64)).abs() < 1e-15);
                if m + 1 < md {
                    let expect = -0.2 * n as f64 * ((m + 1) as f64).sqrt();
                    assert!((h.entries()[(i + 1, i)].re - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn polaron_defect_small() {
        let zero = polaron_identity_defect(&params(0.0, c(1.0, 0.0)), 6, 30).unwrap();
        assert_eq!(zero, 0.0);
        let defect = polaron_identity_defect(&params(0.2, c(1.0, 0.0)), 6, 40).unwrap();
        assert!(defect <= 1e-8, "defect {defect}");
    }

    #[test]
    fn number_state_closed_form() {
        let p = SystemParams::new(0.9, 1.0, 0.3, c(1.0, 0.0), Frame::Lab).unwrap();
        let trunc = Truncation::new(5, 60).unwrap();
        let n = 3usize;
        let psi0 = tensor(
            &StateVector::basis(Space::Field, 5, n).unwrap(),
            &StateVector::basis(Space::Mirror, 60, 0).unwrap(),
        )
        .unwrap();
        let eng = FactoredEngine::new(&p, trunc).unwrap();
        let t = 1.7;
        let psi = eng.evolve(&psi0, t).unwrap();
        let eta = p.eta();
        let nf = n as f64;
        let phase = C64::from_polar(1.0, -0.9 * nf * t + eta * eta * nf * nf * (t - t.sin()));
        let beta = (c(1.0, 0.0) - C64::from_polar(1.0, -t)) * eta * nf;
        let mirror = coherent_state(beta, Mode::Mirror, 60).unwrap();
        let expect = tensor(&StateVector::basis(Space::Field, 5, n).unwrap(), &mirror).unwrap();
        let diff = psi.entries() - expect.entries() * phase;
        assert!(diff.camax() < 1e-10, "diff {}", diff.camax());
    }

    #[test]
    fn engines_agree_and_conserve() {
        let p = SystemParams::new(0.4, 1.0, 0.3, c(1.0, 0.2), Frame::Lab).unwrap();
        let trunc = Truncation::auto(&p, &MirrorFamily::Vacuum);
        let field = coherent_state(p.alpha(), Mode::Field, trunc.field_dim).unwrap();
        let mirror = coherent_state(c(0.3, -0.2), Mode::Mirror, trunc.mirror_dim).unwrap();
        let psi0 = tensor(&field, &mirror).unwrap();
        let brute = BruteEngine::new(&p, trunc).unwrap();
        let fact = FactoredEngine::new(&p, trunc).unwrap();
        let h = hamiltonian(&p, trunc.field_dim, trunc.mirror_dim).unwrap();
        let e0 = psi0.expectation(&h).unwrap().re;
        for &t in &[0.0, 0.8, 2.5, 5.0] {
            let a = brute.evolve(&psi0, t).unwrap();
            let b = fact.evolve(&psi0, t).unwrap();
            assert!((a.norm() - 1.0).abs() < 1e-10);
            assert!((b.norm() - 1.0).abs() < 1e-10);
            assert!(a.inner(&b).unwrap().norm() >= 1.0 - 1e-9);
            assert!((a.expectation(&h).unwrap().re - e0).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_coupling_phases() {
        let p = SystemParams::new(1.1, 0.6, 0.0, c(1.0, 0.0), Frame::Lab).unwrap();
        let psi0 = tensor(
            &StateVector::basis(Space::Field, 4, 2).unwrap(),
            &StateVector::basis(Space::Mirror, 6, 3).unwrap(),
        )
        .unwrap();
        let t = 0.9;
        let out = evolve_brute(&psi0, &p, t).unwrap();
        let phase = C64::from_polar(1.0, -(1.1 * 2.0 + 0.6 * 3.0) * t);
        assert!((out.entries() - psi0.entries() * phase).camax() < 1e-12);
        let fact = evolve_factored(&psi0, &p, t).unwrap();
        assert!((fact.entries() - psi0.entries() * phase).camax() < 1e-12);
    }

    #[test]
    fn revival_disentangles() {
        let p = params(0.4, c(1.0, 0.0));
        let trunc = Truncation::auto(&p, &MirrorFamily::Vacuum);
        let field = coherent_state(p.alpha(), Mode::Field, trunc.field_dim).unwrap();
        let psi0 = tensor(&field, &StateVector::basis(Space::Mirror, trunc.mirror_dim, 0).unwrap()).unwrap();
        let psi = evolve_factored(&psi0, &p, 2.0 * PI).unwrap();
        let purity = reduce_pure(&psi, Mode::Field).unwrap().purity();
        assert!((purity - 1.0).abs() < 1e-8);
    }

    #[test]
    fn vacuum_and_coherent_quadratures() {
        let trunc = Truncation::new(30, 4).unwrap();
        let field = coherent_state(c(1.2, 0.0), Mode::Field, trunc.field_dim).unwrap();
        let psi = tensor(&field, &StateVector::basis(Space::Mirror, 4, 0).unwrap()).unwrap();
        let rec = quadratures(&JointState::Pure(psi.clone()), 0.0, None).unwrap();
        assert!((rec.x_mean - SQRT_2 * 1.2).abs() < 1e-10);
        assert!(rec.y_mean.abs() < 1e-12);
        assert!((rec.x_var - 0.5).abs() < 1e-9 && (rec.y_var - 0.5).abs() < 1e-9);
        let rho = JointState::Density(psi.projector());
        let rec2 = quadratures(&rho, 0.0, None).unwrap();
        assert!((rec2.x_mean - rec.x_mean).abs() < 1e-12);

        let vac = tensor(
            &StateVector::basis(Space::Field, 5, 0).unwrap(),
            &StateVector::basis(Space::Mirror, 4, 0).unwrap(),
        )
        .unwrap();
        let rec = quadratures(&JointState::Pure(vac), 0.0, None).unwrap();
        assert_eq!((rec.x_var, rec.y_var), (0.5, 0.5));
    }

    #[test]
    fn shot_noise_is_keyed_and_vanishes() {
        let rec = QuadratureRecord::from_measurement(0.0, 1.0, -0.5, 0.5, 0.5, None);
        let noise = ShotNoise::new(100, 7).unwrap();
        let a = rec.with_shot_noise(&noise, 3).unwrap();
        let b = rec.with_shot_noise(&noise, 3).unwrap();
        let other = rec.with_shot_noise(&noise, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x_mean, other.x_mean);
        assert!(a.noisy);
        let huge = rec.with_shot_noise(&ShotNoise::new(1 << 60, 7).unwrap(), 3).unwrap();
        assert!((huge.x_mean - 1.0).abs() < 1e-8);
        assert!(ShotNoise::new(0, 1).is_err());
    }

    #[test]
    fn zero_coupling_protocol() {
        let alpha = c(0.8, 0.3);
        let p = SystemParams::new(2.0, 1.0, 0.0, alpha, Frame::Lab).unwrap();
        let spec = MirrorStateSpec::new(MirrorFamily::Vacuum, 10).unwrap();
        let trunc = Truncation::auto(&p, &spec.family());
        let times = uniform_times(3.0, 6).unwrap();
        let run = simulate_protocol(&p, &spec, &times, EngineKind::Factored, trunc, None).unwrap();
        assert_eq!(run.records.len(), 7);
        for r in &run.records {
            let expect = alpha * C64::from_polar(1.0, -2.0 * r.t);
            assert!((r.a_mean - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn auto_truncation_sizes() {
        let p = params(0.5, c(2.0, 0.0));
        let t = Truncation::auto(&p, &MirrorFamily::Vacuum);
        assert_eq!(t.field_dim, 26);
        assert!(t.mirror_dim >= 4 * 9 * 9);
        assert_eq!(poisson_support(0.0, 1e-10), 0);
    }
}
