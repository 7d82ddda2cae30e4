use thiserror::Error;

use crate::entropy::EntropyEstimate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is empty")]
    Empty,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("entry ({row}, {col}) is not a finite number")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    NonStochastic { row: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} is negative")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("symbol label {label} of state {state} is outside the alphabet of size {alphabet}")]
    PhiOutOfRange { state: usize, label: i64, alphabet: usize },
    #[error("eigenvalue 1 has multiplicity {multiplicity}; stationary distribution is not unique")]
    NonSimpleUnitEigenvalue { multiplicity: usize },
    #[error("matrix of size {size} exceeds the {max}-state limit")]
    MatrixTooLarge { size: usize, max: usize },
    #[error("eigenvalue solver did not converge")]
    EigenSolverFailure,
    #[error("crossover probability {0} is outside [0, 1]")]
    InvalidEps(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("symbol {symbol} has zero probability from the current belief (mass {mass:e})")]
    ZeroMass { symbol: usize, mass: f64 },
    #[error("simplex points do not share the requested support")]
    SupportMismatch,
    #[error("coordinate {index} is not strictly positive on the support")]
    NonPositiveCoordinate { index: usize },
    #[error("sample is degenerate: {0}")]
    DegenerateSample(String),
    #[error("block entry ({row}, {col}) is zero")]
    ZeroEntryInBlock { row: usize, col: usize },
    #[error("no contracting composition up to depth {depth}; largest derivative norm {max_norm}")]
    NoContractionFound { depth: usize, max_norm: f64 },
    #[error("enumeration of {leaves} leaves exceeds the budget of {budget}")]
    BudgetExceeded { leaves: u128, budget: u128 },
    #[error("tolerance not reached: best gap {:e} at n = {}", .best.upper - .best.lower, .best.depth_n)]
    ToleranceNotReached { best: Box<EntropyEstimate> },
    #[error("a contraction certificate is required")]
    MissingCertificate,
    #[error("no unambiguous symbol: {0}")]
    NoUnambiguousSymbol(String),
    #[error("the unambiguous-symbol analysis needs a binary alphabet, got {0} symbols")]
    NotBinary(usize),
    #[error("transition matrix is not irreducible")]
    NonIrreducible,
    #[error("condition 1 inconclusive: dominant-term crossover j0 = {j0} exceeds j_max = {j_max}")]
    Inconclusive { j0: u64, j_max: usize },
    #[error("series conditions failed: {0}")]
    ConditionsFailed(String),
    #[error("denominator of the belief map vanishes")]
    SingularDenominator,
    #[error("no feasible point on the search grid")]
    NoFeasiblePoint,
    #[error("model file: {0}")]
    ModelFile(String),
}
