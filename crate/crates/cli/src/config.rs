//! Run configuration: a JSON document with fixed blocks. Unknown keys are
//! errors.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use optomirror::dynamics::{derive_coupling, STEPS_PER_PERIOD};
use optomirror::{Frame, GridGeometry, MirrorStateSpec, SystemParams, Truncation, C64};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsBlock,
    #[serde(default)]
    pub mirror: Option<String>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub truncation: TruncationBlock,
    #[serde(default)]
    pub noise: NoiseBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    /// Cavity field frequency (rad/s).
    #[serde(default)]
    pub omega: f64,
    /// Mirror frequency (rad/s).
    #[serde(rename = "Omega")]
    pub omega_mirror: f64,
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default, rename = "L")]
    pub length: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
    pub alpha: [f64; 2],
    #[serde(default)]
    pub frame: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub t_max: Option<f64>,
    pub steps: Option<usize>,
    pub eta_list: Option<Vec<f64>>,
}

/// A count or the literal `"auto"` / `"none"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CountOr {
    Count(u64),
    Word(String),
}

impl CountOr {
    fn resolve(&self, word: &str, what: &str) -> Result<Option<u64>, CliError> {
        match self {
            CountOr::Count(n) => Ok(Some(*n)),
            CountOr::Word(w) if w == word => Ok(None),
            CountOr::Word(w) => Err(CliError::config(format!("{what}: expected a number or \"{word}\", got \"{w}\""))),
        }
    }
}

fn auto() -> CountOr {
    CountOr::Word("auto".into())
}

fn none() -> CountOr {
    CountOr::Word("none".into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    #[serde(default = "auto")]
    pub field_dim: CountOr,
    #[serde(default = "auto")]
    pub mirror_dim: CountOr,
}

impl Default for TruncationBlock {
    fn default() -> Self {
        Self {
            field_dim: auto(),
            mirror_dim: auto(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    #[serde(default = "none")]
    pub shots: CountOr,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        Self { shots: none(), seed: 0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerBlock {
    pub center: [f64; 2],
    pub half_width: f64,
    pub n: usize,
}

impl Default for WignerBlock {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            half_width: 2.0,
            n: 41,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub wigner: WignerBlock,
    /// Spacing of the characteristic-function grid.
    pub lambda_spacing: Option<f64>,
    /// Half width of the characteristic-function grid; defaults to
    /// `2 max(eta) + 1`.
    pub lambda_reach: Option<f64>,
    /// Fock levels used for the reference Wigner grid.
    pub reference_dim: Option<usize>,
}

/// How the coupling was specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingSource {
    Direct,
    Cavity { length: f64, mass: f64 },
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Run {
    pub base: SystemParams,
    pub coupling: CouplingSource,
    pub mirror: Option<MirrorStateSpec>,
    pub eta_list: Vec<f64>,
    pub times: Vec<f64>,
    pub field_dim: Option<usize>,
    pub mirror_dim: Option<usize>,
    pub shots: Option<u64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub wigner: GridGeometry,
    pub lambda_spacing: f64,
    pub lambda_reach: f64,
    pub reference_dim: Option<usize>,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

fn dim(value: &CountOr, what: &str) -> Result<Option<usize>, CliError> {
    value
        .resolve("auto", what)?
        .map(|n| usize::try_from(n).map_err(|_| CliError::config(format!("{what} too large"))))
        .transpose()
}

impl RunConfig {
    pub fn validate(&self, out_dir: Option<&Path>) -> Result<Run, CliError> {
        let p = &self.params;
        let frame: Frame = match &p.frame {
            Some(f) => f.parse().map_err(CliError::config)?,
            None => Frame::default(),
        };
        let alpha = C64::new(p.alpha[0], p.alpha[1]);
        let (base, coupling) = match (p.g, p.length, p.m) {
            (Some(g), None, None) => (
                SystemParams::new(p.omega, p.omega_mirror, g, alpha, frame).map_err(CliError::config)?,
                CouplingSource::Direct,
            ),
            (None, Some(length), Some(mass)) => (
                SystemParams::from_cavity(p.omega, p.omega_mirror, length, mass, alpha, frame).map_err(CliError::config)?,
                CouplingSource::Cavity { length, mass },
            ),
            (Some(_), _, _) => return Err(CliError::config("params: give either g or both L and m, not both")),
            _ => return Err(CliError::config("params: missing coupling; give g, or both L and m")),
        };

        let eta_list = match &self.grid.eta_list {
            Some(list) if list.is_empty() => return Err(CliError::config("grid.eta_list is empty")),
            Some(list) => {
                if let Some(bad) = list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                    return Err(CliError::config(format!("grid.eta_list: {bad} is not strictly positive")));
                }
                list.clone()
            }
            None => vec![base.eta()],
        };

        let period = 2.0 * PI / base.omega_mirror();
        let t_max = self.grid.t_max.unwrap_or(period);
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(CliError::config(format!("grid.t_max must be finite and >= 0, got {t_max}")));
        }
        let steps = self.grid.steps.unwrap_or(STEPS_PER_PERIOD);
        let times = optomirror::dynamics::uniform_times(t_max, steps).map_err(CliError::config)?;

        let mirror = self
            .mirror
            .as_deref()
            .map(|s| s.parse::<MirrorStateSpec>().map_err(CliError::config))
            .transpose()?;

        let field_dim = dim(&self.truncation.field_dim, "truncation.field_dim")?;
        let mirror_dim = dim(&self.truncation.mirror_dim, "truncation.mirror_dim")?;
        if let (Some(f), Some(m)) = (field_dim, mirror_dim) {
            Truncation::new(f, m).map_err(CliError::config)?;
        }
        let shots = self.noise.shots.resolve("none", "noise.shots")?;
        if shots == Some(0) {
            return Err(CliError::config("noise.shots must be positive"));
        }

        let w = &self.output.wigner;
        let wigner = GridGeometry::new(C64::new(w.center[0], w.center[1]), w.half_width, w.n).map_err(CliError::config)?;
        let lambda_spacing = self.output.lambda_spacing.unwrap_or(0.05);
        let max_eta = eta_list.iter().copied().fold(0.0, f64::max);
        let lambda_reach = self.output.lambda_reach.unwrap_or(2.0 * max_eta + 1.0);
        for (name, v) in [("output.lambda_spacing", lambda_spacing), ("output.lambda_reach", lambda_reach)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("{name} must be positive, got {v}")));
            }
        }

        let out_dir = out_dir
            .map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));

        Ok(Run {
            base,
            coupling,
            mirror,
            eta_list,
            times,
            field_dim,
            mirror_dim,
            shots,
            seed: self.noise.seed,
            out_dir,
            wigner,
            lambda_spacing,
            lambda_reach,
            reference_dim: self.output.reference_dim,
        })
    }
}

impl Run {
    pub fn params_for(&self, eta: f64) -> Result<SystemParams, CliError> {
        self.base.with_eta(eta).map_err(CliError::config)
    }

    /// The truncation for one sweep point: explicit dims where given, the
    /// automatic policy otherwise.
    pub fn truncation_for(&self, params: &SystemParams, mirror: &MirrorStateSpec) -> Result<Truncation, CliError> {
        let auto = Truncation::auto(params, &mirror.family());
        Truncation::new(self.field_dim.unwrap_or(auto.field_dim), self.mirror_dim.unwrap_or(auto.mirror_dim))
            .map_err(CliError::config)
    }
}

/// `g = (omega / L) sqrt(hbar / (2 m Omega))`, re-derived for display.
pub fn cavity_coupling(omega: f64, length: f64, mass: f64, omega_mirror: f64) -> Result<f64, CliError> {
    derive_coupling(omega, length, mass, omega_mirror).map_err(CliError::config)
}
