use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("weighted system is singular beyond recovery")]
    SingularSystem,
    #[error("no feasible point found (relative residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("support became empty while the residual {residual:e} exceeds epsilon")]
    EmptySupport { residual: f64 },
    #[error("column {0} is identically zero")]
    ZeroColumn(usize),
    #[error("matrix has full column rank; the null space is trivial")]
    TrivialNullSpace,
    #[error("enumeration too large: {0}")]
    TooLarge(String),
    #[error("value {0} out of range")]
    OutOfRange(f64),
    #[error("polynomial has non-real roots (imaginary part up to {max_imag:e})")]
    NonRealRoots { max_imag: f64 },
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("point counts differ: {0} estimates vs {1} truths")]
    CountMismatch(usize, usize),
}
