use thiserror::Error;

/// Errors raised by the library. Every operation returns these through
/// [`Result`]; nothing panics on bad input.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("state is not normalized: norm {norm}")]
    NotNormalized { norm: f64 },

    #[error("operator is not Hermitian: ‖H − H†‖_F = {deviation:e}")]
    NotHermitian { deviation: f64 },

    #[error("operator is not unitary: ‖U†U − I‖_F = {defect:e}")]
    NotUnitary { defect: f64 },

    #[error("operator is not square: {rows}×{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("invalid factor selection: {0}")]
    InvalidFactorSet(String),

    #[error("expected a bipartite state, found {factors} factors")]
    NotBipartite { factors: usize },

    #[error("branch index {index} out of range for rank {rank}")]
    IndexOutOfRange { index: usize, rank: usize },

    #[error("swap indices must differ (both are {0})")]
    IdenticalIndices(usize),

    #[error("branches {k1} and {k2} have unequal moduli {m1} and {m2}")]
    UnequalModuli { k1: usize, k2: usize, m1: f64, m2: f64 },

    #[error("witness construction failed: undo residual {residual:e} exceeds {tolerance:e}")]
    WitnessConstruction { residual: f64, tolerance: f64 },

    #[error("max denominator {max_denominator} cannot give {branches} branches a weight of at least one")]
    DenominatorTooSmall { max_denominator: u64, branches: usize },

    #[error("weights do not match the counterweight state: {0}")]
    NonMatchingWeights(String),

    #[error("environment dimension {available} is smaller than the {needed} fine-grained branches")]
    InsufficientEnvironment { needed: usize, available: usize },

    #[error("invalid projector family: {0}")]
    InvalidProjectorFamily(String),

    #[error("basis is not orthonormal: Gram defect {defect:e}")]
    NonOrthonormalBasis { defect: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
