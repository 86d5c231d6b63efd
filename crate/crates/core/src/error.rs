use std::path::PathBuf;

use thiserror::Error;

/// How a failed inverse search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OffManifoldKind {
    /// No visited region's affine span passes within tolerance of the point.
    Certified,
    /// Some visited affine span contains the point, but its preimage never
    /// landed inside the matching region before the iteration cap.
    SearchFailure,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite input: {0}")]
    Domain(String),

    #[error("code length {got} does not match network code length {expected}")]
    CodeLength { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("map is not invertible (rank {rank} < {required})")]
    NotInvertible { rank: usize, required: usize },

    #[error("degenerate map: {0}")]
    DegenerateMap(String),

    #[error("point is off the generated manifold ({kind:?}); best residual {best_residual:e}")]
    NotOnManifold {
        best_residual: f64,
        kind: OffManifoldKind,
    },

    #[error("sampling failed after {attempts} attempts: {reason}")]
    SamplingFailure { attempts: usize, reason: String },

    #[error("network has no nonlinear units, so its partition has no boundaries")]
    NoBoundaries,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("layer {layer}: {message}")]
    Validation { layer: usize, message: String },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by bad user parameters rather than by the model.
    pub fn is_parameter_error(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Shape(_)
                | Error::Domain(_)
                | Error::CodeLength { .. }
                | Error::InsufficientData(_)
        )
    }

    /// True for errors that stem from a rank-deficient or boundary-free model.
    pub fn is_degenerate_model(&self) -> bool {
        matches!(
            self,
            Error::NotInvertible { .. } | Error::DegenerateMap(_) | Error::NoBoundaries
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
