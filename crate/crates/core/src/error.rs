use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: malformed model, mismatched dimensions, invalid arguments.
    Model,
    /// A numerical procedure did not converge or hit a degeneracy it must avoid.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: |H[{row}][{col}] - conj(H[{col}][{row}])| = {violation:.3e}")]
    NotHermitian { row: usize, col: usize, violation: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vectors are not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:.3e})")]
    EigenNoConvergence { sweeps: usize, residual: f64 },
    #[error("invalid spin {0}: must be a nonnegative half-integer")]
    InvalidSpin(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("declared symmetry `{name}` does not hold (max violation {violation:.3e})")]
    SymmetryViolated { name: String, violation: f64 },
    #[error("band {band} is degenerate on the {what} near {location:?} (gap {gap:.3e})")]
    DegenerateOnSurface {
        what: &'static str,
        band: usize,
        location: Vec<f64>,
        gap: f64,
    },
    #[error("Berry phase did not converge with {points} loop points: {reason}")]
    BerryNoConvergence { points: usize, reason: String },
    #[error("gap minimization did not converge near {location:?} (residual gap {gap:.3e})")]
    NearDegeneracy { location: Vec<f64>, gap: f64 },
    #[error("ambiguous eigenvalue grouping: spacing {spacing:.3e} lies between group and split tolerances")]
    AmbiguousGrouping { spacing: f64 },
    #[error("degenerate point at {location:?} is not isolated")]
    NotIsolated { location: Vec<f64> },
    #[error("another degeneracy at {other:?} lies within {radius} of {location:?}")]
    MultipleComponents {
        location: Vec<f64>,
        other: Vec<f64>,
        radius: f64,
    },
    #[error("chirality routes disagree: {0}")]
    InconsistentChirality(String),
    #[error("point at {location:?} is not equatorial (S_z coefficient {sz:.3e})")]
    NotEquatorial { location: Vec<f64>, sz: f64 },
    #[error("slicing along axis {axis} is not generic: projections {a:.6} and {b:.6} closer than {tol:e}; apply a shear to the coordinates")]
    NonGeneric { axis: usize, a: f64, b: f64, tol: f64 },
    #[error("no valid slicing along axis {axis}: every slice meets the degenerate locus")]
    NoValidSlicing { axis: usize },
    #[error("degeneracy crossed the boundary of the ball at {center:?} (half-width {half_width}); use a larger ball")]
    BallBoundaryCrossing { center: Vec<f64>, half_width: f64 },
    #[error("slice profile along axis {axis} is inconsistent inside interval ({start:.6}, {end:.6}): a degeneracy was missed")]
    MissedDegeneracy { axis: usize, start: f64, end: f64 },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NotHermitian { .. }
            | Error::DimensionMismatch { .. }
            | Error::NotOrthonormal { .. }
            | Error::InvalidSpin(_)
            | Error::InvalidArgument(_)
            | Error::ModelFile(_)
            | Error::SymmetryViolated { .. }
            | Error::NoValidSlicing { .. }
            | Error::NonGeneric { .. } => ErrorKind::Model,
            _ => ErrorKind::Numerical,
        }
    }
}
