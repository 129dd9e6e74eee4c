use thiserror::Error;

use crate::fock::Space;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    /// A displacement or coherent amplitude does not fit in the truncated space.
    #[error("truncation overflow: |amplitude|^2 = {amplitude_sq:.4} exceeds dim = {dim}; enlarge the space")]
    TruncationOverflow { amplitude_sq: f64, dim: usize },

    #[error("space mismatch: expected {expected:?}, found {found:?}")]
    SpaceMismatch { expected: Space, found: Space },

    #[error("matrix is not Hermitian (max deviation {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid state vector: {0}")]
    InvalidState(String),

    #[error("invalid mirror state: {0}")]
    InvalidMirrorState(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The field amplitude is zero, so quadratures carry no information about the mirror.
    #[error("protocol degenerate: initial field amplitude is zero")]
    ProtocolDegenerate,

    #[error("frame mismatch: record taken in {record} frame, kernel uses {kernel} frame")]
    FrameMismatch { record: String, kernel: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("characteristic grid is not Hermitian-symmetric (max |chi(-l) - conj chi(l)| = {defect:e})")]
    NotSymmetrized { defect: f64 },

    #[error("transform left an imaginary residue of {residue:e}")]
    NonRealResult { residue: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}
