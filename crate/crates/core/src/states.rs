//! Field and mirror state constructors, symmetric-order characteristic
//! functions `chi(lambda) = Tr[rho D(lambda)]` and displaced-parity Wigner
//! values.

use std::f64::consts::FRAC_2_PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fock::{displacement_op, parity_op, DensityMatrix, Displacer, Mode, Space, StateVector};
use crate::C64;

/// Coherent-state truncation leakage above which a state is flagged.
pub const LEAKAGE_WARN: f64 = 1e-8;

/// Populations below this are dropped when a mixed state is split into pure
/// components.
pub const COMPONENT_CUTOFF: f64 = 1e-15;

/// Smallest squared cat normalisation `2 + 2 e^{-2|beta|^2} cos(phi)` accepted.
const CAT_NORM_MIN: f64 = 1e-10;

/// The supported mirror state families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MirrorFamily {
    Vacuum,
    Fock(usize),
    Coherent(C64),
    /// Thermal state with the given mean occupation.
    Thermal(f64),
    /// `N (|beta> + e^{i phase} |-beta>)`
    Cat { amplitude: C64, phase: f64 },
}

impl MirrorFamily {
    fn cat_norm_sq(amplitude: C64, phase: f64) -> f64 {
        2.0 + 2.0 * (-2.0 * amplitude.norm_sqr()).exp() * phase.cos()
    }

    /// Radius in amplitude space occupied by the state: the displacement an
    /// initial vacuum would need to reach the same Fock levels.
    pub fn extent(&self) -> f64 {
        match *self {
            MirrorFamily::Vacuum => 0.0,
            MirrorFamily::Fock(n) => (n as f64).sqrt(),
            MirrorFamily::Coherent(b) => b.norm(),
            MirrorFamily::Cat { amplitude, .. } => amplitude.norm(),
            MirrorFamily::Thermal(nbar) => (thermal_cutoff(nbar, 1e-12) as f64).sqrt(),
        }
    }

    /// A dimension large enough that truncation leakage is negligible.
    pub fn recommended_dim(&self) -> usize {
        match *self {
            MirrorFamily::Vacuum => 20,
            MirrorFamily::Fock(n) => n + 20,
            MirrorFamily::Coherent(b) | MirrorFamily::Cat { amplitude: b, .. } => {
                let r = b.norm();
                ((r * r + 8.0 * r).ceil() as usize + 20).max((4.0 * r * r).ceil() as usize)
            }
            MirrorFamily::Thermal(nbar) => thermal_cutoff(nbar, 1e-16) + 2,
        }
    }

    pub fn is_pure(&self) -> bool {
        !matches!(self, MirrorFamily::Thermal(nbar) if *nbar > 0.0)
    }
}

/// Smallest level `k` with thermal population `p_k < tol`.
fn thermal_cutoff(nbar: f64, tol: f64) -> usize {
    if nbar <= 0.0 {
        return 1;
    }
    let ratio = nbar / (nbar + 1.0);
    let k = ((tol * (nbar + 1.0)).ln() / ratio.ln()).ceil();
    (k.max(1.0)) as usize
}

impl fmt::Display for MirrorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MirrorFamily::Vacuum => write!(f, "vacuum"),
            MirrorFamily::Fock(n) => write!(f, "fock({n})"),
            MirrorFamily::Coherent(b) => write!(f, "coherent({},{})", b.re, b.im),
            MirrorFamily::Thermal(nbar) => write!(f, "thermal({nbar})"),
            MirrorFamily::Cat { amplitude, phase } => {
                write!(f, "cat({},{},{})", amplitude.re, amplitude.im, phase)
            }
        }
    }
}

fn parse_args(s: &str, name: &str, arity: usize) -> Result<Vec<f64>> {
    let inner = s
        .strip_prefix(name)
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("malformed mirror state `{s}`")))?;
    let args: Vec<f64> = inner
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number `{}` in `{s}`: {e}", a.trim())))
        })
        .collect::<Result<_>>()?;
    if args.len() != arity {
        return Err(Error::Parse(format!("`{name}` takes {arity} argument(s), got {}", args.len())));
    }
    if args.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse(format!("non-finite argument in `{s}`")));
    }
    Ok(args)
}

impl FromStr for MirrorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let name = s.split('(').next().unwrap_or("").trim();
        match name {
            "vacuum" if s == "vacuum" => Ok(MirrorFamily::Vacuum),
            "fock" => {
                let inner = s
                    .strip_prefix("fock(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Parse(format!("malformed mirror state `{s}`")))?;
                let n = inner
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad Fock index in `{s}`: {e}")))?;
                Ok(MirrorFamily::Fock(n))
            }
            "coherent" => {
                let a = parse_args(s, "coherent", 2)?;
                Ok(MirrorFamily::Coherent(C64::new(a[0], a[1])))
            }
            "thermal" => {
                let a = parse_args(s, "thermal", 1)?;
                Ok(MirrorFamily::Thermal(a[0]))
            }
            "cat" => {
                let a = parse_args(s, "cat", 3)?;
                Ok(MirrorFamily::Cat {
                    amplitude: C64::new(a[0], a[1]),
                    phase: a[2],
                })
            }
            _ => Err(Error::Parse(format!("unknown mirror state `{s}`"))),
        }
    }
}

/// A mirror state family together with its truncation dimension.
///
/// Canonical text form: `<family>@<dim>`, e.g. `cat(1.5,0,0)@60`. The `@dim`
/// suffix may be omitted when parsing, in which case
/// [`MirrorFamily::recommended_dim`] is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorStateSpec {
    family: MirrorFamily,
    dim: usize,
}

impl MirrorStateSpec {
    pub fn new(family: MirrorFamily, dim: usize) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidMirrorState(msg));
        if dim < 2 {
            return bad(format!("dimension {dim} is below 2"));
        }
        match family {
            MirrorFamily::Vacuum => {}
            MirrorFamily::Fock(n) if n >= dim => return bad(format!("fock({n}) needs dim > {n}")),
            MirrorFamily::Fock(_) => {}
            MirrorFamily::Coherent(b) | MirrorFamily::Cat { amplitude: b, .. }
                if b.norm_sqr().is_nan() || b.norm_sqr() > dim as f64 / 4.0 =>
            {
                return bad(format!("|beta|^2 = {} exceeds dim/4 = {}", b.norm_sqr(), dim as f64 / 4.0));
            }
            MirrorFamily::Coherent(_) => {}
            MirrorFamily::Thermal(nbar) if !(nbar >= 0.0 && nbar.is_finite()) => {
                return bad(format!("thermal occupation {nbar} must be finite and nonnegative"));
            }
            MirrorFamily::Thermal(_) => {}
            MirrorFamily::Cat { amplitude, phase } => {
                if !phase.is_finite() || MirrorFamily::cat_norm_sq(amplitude, phase) < CAT_NORM_MIN {
                    return bad("cat normalisation constant diverges".into());
                }
            }
        }
        Ok(Self { family, dim })
    }

    /// Uses the family's recommended dimension.
    pub fn auto(family: MirrorFamily) -> Result<Self> {
        Self::new(family, family.recommended_dim())
    }

    pub fn family(&self) -> MirrorFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::new(self.family, dim)
    }
}

impl fmt::Display for MirrorStateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.family, self.dim)
    }
}

impl FromStr for MirrorStateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.rsplit_once('@') {
            Some((fam, dim)) => {
                let dim = dim
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad dimension in `{s}`: {e}")))?;
                Self::new(fam.parse()?, dim)
            }
            None => Self::auto(s.parse()?),
        }
    }
}

/// Unnormalised truncated coherent expansion and its norm deficit.
fn coherent_amplitudes(alpha: C64, dim: usize) -> (DVector<C64>, f64) {
    let mut v = DVector::from_element(dim, C64::new(0.0, 0.0));
    let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..dim {
        if n > 0 {
            c *= alpha / (n as f64).sqrt();
        }
        v[n] = c;
    }
    let kept: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    (v, (1.0 - kept).max(0.0))
}

/// Truncated coherent state `|alpha>` renormalised to unit norm, together with
/// the population lost to truncation before renormalisation.
pub fn coherent_state_with_leakage(alpha: C64, mode: Mode, dim: usize) -> Result<(StateVector, f64)> {
    if dim == 0 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "dimension must be positive",
        });
    }
    if alpha.norm_sqr().is_nan() || alpha.norm_sqr() > dim as f64 {
        return Err(Error::TruncationOverflow {
            amplitude_sq: alpha.norm_sqr(),
            dim,
        });
    }
    let (v, leak) = coherent_amplitudes(alpha, dim);
    Ok((StateVector::normalized(mode.into(), v)?, leak))
}

pub fn coherent_state(alpha: C64, mode: Mode, dim: usize) -> Result<StateVector> {
    coherent_state_with_leakage(alpha, mode, dim).map(|(s, _)| s)
}

/// Pure-state vector for the pure families.
pub fn mirror_pure_state(spec: &MirrorStateSpec) -> Result<Option<StateVector>> {
    let dim = spec.dim;
    let space = Space::Mirror;
    let state = match spec.family {
        MirrorFamily::Vacuum => StateVector::basis(space, dim, 0)?,
        MirrorFamily::Fock(n) => StateVector::basis(space, dim, n)?,
        MirrorFamily::Coherent(b) => coherent_state(b, Mode::Mirror, dim)?,
        MirrorFamily::Thermal(0.0) => StateVector::basis(space, dim, 0)?,
        MirrorFamily::Thermal(_) => return Ok(None),
        MirrorFamily::Cat { amplitude, phase } => {
            let (plus, _) = coherent_amplitudes(amplitude, dim);
            let (minus, _) = coherent_amplitudes(-amplitude, dim);
            let norm = MirrorFamily::cat_norm_sq(amplitude, phase).sqrt();
            let v = (plus + minus * C64::from_polar(1.0, phase)).unscale(norm);
            // renormalise away whatever truncation removed
            StateVector::normalized(space, v)?
        }
    };
    Ok(Some(state))
}

fn thermal_populations(nbar: f64, dim: usize) -> Vec<f64> {
    let ratio = nbar / (nbar + 1.0);
    let mut p: Vec<f64> = (0..dim).map(|n| ratio.powi(n as i32) / (nbar + 1.0)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// The mirror state as weighted pure components (a single component for pure
/// families, Fock components for thermal states).
pub fn mirror_ensemble(spec: &MirrorStateSpec) -> Result<Vec<(f64, StateVector)>> {
    if let Some(psi) = mirror_pure_state(spec)? {
        return Ok(vec![(1.0, psi)]);
    }
    let MirrorFamily::Thermal(nbar) = spec.family else {
        unreachable!("only thermal states are mixed");
    };
    thermal_populations(nbar, spec.dim)
        .into_iter()
        .enumerate()
        .filter(|(_, p)| *p > COMPONENT_CUTOFF)
        .map(|(n, p)| StateVector::basis(Space::Mirror, spec.dim, n).map(|s| (p, s)))
        .collect()
}

/// The mirror density matrix described by `spec`.
pub fn build_mirror_state(spec: &MirrorStateSpec) -> Result<DensityMatrix> {
    if let Some(psi) = mirror_pure_state(spec)? {
        return Ok(psi.projector());
    }
    let MirrorFamily::Thermal(nbar) = spec.family else {
        unreachable!("only thermal states are mixed");
    };
    let p = thermal_populations(nbar, spec.dim);
    let rho = DMatrix::from_fn(spec.dim, spec.dim, |i, j| {
        if i == j {
            C64::new(p[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    DensityMatrix::new(Space::Mirror, rho)
}

fn single_mode(rho: &DensityMatrix) -> Result<Mode> {
    match rho.space() {
        Space::Field => Ok(Mode::Field),
        Space::Mirror => Ok(Mode::Mirror),
        found => Err(Error::SpaceMismatch {
            expected: Space::Mirror,
            found,
        }),
    }
}

/// `chi(lambda) = Tr[rho D(lambda)]`, by forming `D(lambda)` explicitly.
///
/// For many evaluations on the same state use [`PhaseSpaceProbe`].
pub fn char_fn_direct(rho: &DensityMatrix, lambda: C64) -> Result<C64> {
    let mode = single_mode(rho)?;
    let d = displacement_op(lambda, mode, rho.dim())?;
    Ok(rho.entries().component_mul(&d.entries().transpose()).sum())
}

/// Displaced-parity Wigner value `(2/pi) Tr[rho D(beta) P D(beta)^dag]`.
pub fn wigner_direct(rho: &DensityMatrix, beta: C64) -> Result<f64> {
    let mode = single_mode(rho)?;
    let d = displacement_op(beta, mode, rho.dim())?;
    let parity = parity_op(mode, rho.dim())?;
    let op = d.entries() * parity.entries() * d.entries().adjoint();
    let value = rho.entries().component_mul(&op.transpose()).sum() * FRAC_2_PI;
    check_real(value)
}

fn check_real(value: C64) -> Result<f64> {
    let residue = value.im.abs();
    if residue > 1e-10 * value.re.abs().max(1.0) {
        return Err(Error::NonRealResult { residue });
    }
    Ok(value.re)
}

/// Laguerre polynomial `L_n(x)` by the three-term recurrence.
pub fn laguerre(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 1.0 - x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = ((2 * k + 1) as f64 - x) * cur - k as f64 * prev;
        prev = cur;
        cur = next / (k + 1) as f64;
    }
    cur
}

/// `<a| D(lambda) |b>` for coherent states `|a>`, `|b>`.
fn coherent_matrix_element(a: C64, b: C64, lambda: C64) -> C64 {
    let shifted = b + lambda;
    let overlap = (-(a.norm_sqr() + shifted.norm_sqr()) / 2.0 + a.conj() * shifted).exp();
    ((lambda * b.conj() - lambda.conj() * b) / 2.0).exp() * overlap
}

/// Closed-form characteristic function of the (untruncated) state `spec`
/// describes.
pub fn char_fn_closed(spec: &MirrorStateSpec, lambda: C64) -> C64 {
    spec.family.char_fn(lambda)
}

impl MirrorFamily {
    /// Closed-form characteristic function of the untruncated family member.
    pub fn char_fn(&self, lambda: C64) -> C64 {
    let r2 = lambda.norm_sqr();
    let gauss = (-r2 / 2.0).exp();
    match *self {
        MirrorFamily::Vacuum => C64::new(gauss, 0.0),
        MirrorFamily::Fock(n) => C64::new(laguerre(n, r2) * gauss, 0.0),
        MirrorFamily::Coherent(b) => (-r2 / 2.0 + lambda * b.conj() - lambda.conj() * b).exp(),
        MirrorFamily::Thermal(nbar) => C64::new((-r2 * (nbar + 0.5)).exp(), 0.0),
        MirrorFamily::Cat { amplitude, phase } => {
            let terms = [(C64::new(1.0, 0.0), amplitude), (C64::from_polar(1.0, phase), -amplitude)];
            let mut sum = C64::new(0.0, 0.0);
            for &(ca, a) in &terms {
                for &(cb, b) in &terms {
                    sum += ca.conj() * cb * coherent_matrix_element(a, b, lambda);
                }
            }
            sum / MirrorFamily::cat_norm_sq(amplitude, phase)
        }
    }
    }
}

/// Repeated characteristic-function and Wigner evaluation on one state.
///
/// The state is held as weighted pure components and displacements reuse a
/// shared [`Displacer`], so each evaluation costs a few matrix-vector
/// products instead of a fresh exponentiation.
#[derive(Debug, Clone)]
pub struct PhaseSpaceProbe {
    components: Vec<(f64, DVector<C64>)>,
    displacer: Displacer,
}

impl PhaseSpaceProbe {
    pub fn new(rho: &DensityMatrix) -> Result<Self> {
        let mode = single_mode(rho)?;
        let components = rho
            .spectral_components(COMPONENT_CUTOFF)?
            .into_iter()
            .map(|(p, s)| (p, s.into_entries()))
            .collect();
        Ok(Self {
            components,
            displacer: Displacer::new(mode, rho.dim())?,
        })
    }

    pub fn from_spec(spec: &MirrorStateSpec) -> Result<Self> {
        let components = mirror_ensemble(spec)?
            .into_iter()
            .map(|(p, s)| (p, s.into_entries()))
            .collect();
        Ok(Self {
            components,
            displacer: Displacer::new(Mode::Mirror, spec.dim)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.displacer.dim()
    }

    /// `chi(lambda)`
    pub fn chi(&self, lambda: C64) -> Result<C64> {
        let mut sum = C64::new(0.0, 0.0);
        for (p, psi) in &self.components {
            sum += psi.dotc(&self.displacer.apply(lambda, psi)?) * *p;
        }
        Ok(sum)
    }

    /// `W(beta)` in the `(2/pi)`-parity convention.
    pub fn wigner(&self, beta: C64) -> Result<f64> {
        let mut sum = 0.0;
        for (p, psi) in &self.components {
            let shifted = self.displacer.apply(-beta, psi)?;
            let parity: f64 = shifted
                .iter()
                .enumerate()
                .map(|(m, z)| if m % 2 == 0 { z.norm_sqr() } else { -z.norm_sqr() })
                .sum();
            sum += p * parity;
        }
        Ok(FRAC_2_PI * sum)
    }
}
