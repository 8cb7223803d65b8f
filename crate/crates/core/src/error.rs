use num_complex::Complex64;
use thiserror::Error;

/// Errors raised while validating a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed configuration document: {0}")]
    Malformed(String),
    #[error("boundary points must be strictly increasing (violation at index {index}: {left} >= {right})")]
    Ordering { index: usize, left: f64, right: f64 },
    #[error("boundary list must contain an even, nonzero number of points, got {0}")]
    BoundaryCount(usize),
    #[error("modulation amplitude must lie in [0, 1), got {0}")]
    Amplitude(f64),
    #[error("inconsistent list lengths: {what} has {got} entries, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("truncation requires K >= M (got K = {k}, M = {m})")]
    Truncation { k: usize, m: usize },
    #[error("modulation profile of resonator {0} makes 1/kappa non-positive")]
    NonPositiveProfile(usize),
    #[error("unknown incident direction {0:?}")]
    Direction(String),
}

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum NumericalError {
    #[error("eigensolver did not converge at omega = {omega}")]
    Eigen { omega: Complex64 },
    #[error("gap {gap} resonates for mode n = {mode}: sin(k l) vanishes")]
    ResonantGap { mode: i64, gap: usize },
    #[error("gap resonates: sin(k l) vanishes for k = {k}, l = {length}")]
    ResonantGapRaw { k: Complex64, length: f64 },
    #[error("linear system is numerically singular at omega = {omega} (rcond ~ {rcond:e})")]
    Singular { omega: Complex64, rcond: f64 },
    #[error("residual {residual:e} exceeds the accepted bound")]
    Residual { residual: f64 },
    #[error("ODE integration failed: {0}")]
    Integrator(String),
    #[error("{0} requires a single resonator, got N = {1}")]
    SingleResonatorOnly(&'static str, usize),
    #[error("omega = {omega} is not a pole (relative residual {residual:e})")]
    NotAPole { omega: Complex64, residual: f64 },
    #[error("degenerate pole at omega = {omega}: pencil denominator vanishes")]
    DegeneratePole { omega: Complex64 },
    #[error("operating frequency coincides with pole {pole}")]
    AtPole { pole: Complex64 },
    #[error("grid step {h} too coarse for gap {gap} (needs at least 10 cells)")]
    CoarseGrid { h: f64, gap: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] NumericalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
