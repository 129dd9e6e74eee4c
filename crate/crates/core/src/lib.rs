//! Cavity-field / movable-mirror dynamics on truncated Fock spaces, and
//! reconstruction of the mirror's characteristic and Wigner functions from
//! field quadrature records.
//!
//! The crate is organised bottom-up:
//!
//! * [`fock`]: dense operators, states, tensor products, partial traces and
//!   spectral matrix functions on truncated Fock spaces.
//! * [`states`]: mirror state families, symmetric-order characteristic
//!   functions and displaced-parity Wigner values.
//! * [`dynamics`]: system parameters, the optomechanical Hamiltonian, a
//!   brute-force and a factored (polaron) propagator, and quadrature records.
//! * [`analytic`]: the closed-form field mean `<a(t)>` and the phase-space
//!   curve `lambda(t)` it samples.
//! * [`reconstruct`]: inversion of records into characteristic-function
//!   samples, gridding and Fourier transform to a Wigner grid.
//! * [`formats`]: the CSV and grid text formats shared with the CLI.
//!
//! Conventions fixed across the crate: `hbar = 1` (SI `hbar` appears only when
//! deriving the coupling from cavity length and mirror mass), all frequencies
//! are angular (rad/s), joint indices are flattened field-slow / mirror-fast,
//! and `W(beta) = (2/pi) Tr[rho D(beta) P D(beta)^dag]` so that the Wigner
//! function integrates to one.

pub mod analytic;
pub mod dynamics;
mod error;
pub mod fock;
pub mod formats;
pub mod reconstruct;
pub mod states;

pub use num_complex::Complex64 as C64;

pub use analytic::ProtocolKernel;
pub use dynamics::{
    BruteEngine, EngineKind, FactoredEngine, Frame, QuadratureRecord, SystemParams, Truncation,
};
pub use error::{Error, Result};
pub use fock::{DensityMatrix, Mode, OperatorMatrix, Space, StateVector};
pub use reconstruct::{CharSample, GridGeometry, WignerGrid};
pub use states::{MirrorFamily, MirrorStateSpec};
