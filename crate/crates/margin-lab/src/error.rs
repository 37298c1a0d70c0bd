//! Error type shared across the crate.
//!
//! Numerical routines here distinguish three failure families: the caller
//! passed something malformed (`InvalidParameter`, `Csv`, ...), the data
//! itself rules the computation out (`NonSeparable`), or the arithmetic
//! broke down at runtime (`Diverged`, `RiskOverflow`, `IterationCap`).
//! Front ends map these families onto distinct exit codes, so new variants
//! should stay within one family rather than blur them.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The dual certified that no linear separator with positive margin
    /// exists: the minimum-norm point of the signed hull is (numerically)
    /// the origin.
    #[error(
        "dataset is not linearly separable: dual value {value:.3e} is at or below the \
         separability threshold {threshold:.3e}"
    )]
    NonSeparable { value: f64, threshold: f64 },

    /// Asked to normalize a vector with no direction.
    #[error("cannot normalize a (numerically) zero vector")]
    ZeroVector,

    /// The iterative solver ran out of its iteration budget before
    /// certifying the requested tolerance.
    #[error(
        "solver stopped at the iteration cap {cap} with optimality gap {gap:.3e} \
         (requested tolerance {tol:.3e})"
    )]
    IterationCap { cap: usize, gap: f64, tol: f64 },

    /// Rejection sampling could not place a point at the requested margin.
    #[error(
        "gave up generating point {index} after {cap} attempts; the target margin \
         leaves too little of the unit ball"
    )]
    GenerationCap { cap: usize, index: usize },

    /// A CSV file (dataset or trajectory) failed to parse. Line numbers
    /// are 1-based and count the header.
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },

    /// exp(-beta * margin) would overflow f64 for the worst sample.
    #[error("empirical risk overflows f64: worst exponent is {exponent:.3e}")]
    RiskOverflow { exponent: f64 },

    /// An iterate left the region where results can be trusted.
    #[error("iterate diverged at t = {t}: norm {norm:.3e} is non-finite or above the cap")]
    Diverged { t: f64, norm: f64 },

    /// A schedule was handed to a driver that cannot run it (for example
    /// the continuous-time schedule passed to the discrete stepper).
    #[error("schedule `{0}` cannot be run by this driver")]
    WrongDriver(&'static str),

    /// A trajectory and a dataset that were supposed to belong together
    /// do not (fingerprints disagree).
    #[error("trajectory was recorded against dataset {expected}, got {actual}")]
    DatasetMismatch { expected: String, actual: String },

    /// Rate fitting needs a minimum number of usable records.
    #[error("rate fit needs at least {need} records with t >= t_min, found {found}")]
    TooFewRecords { need: usize, found: usize },

    /// Rate fitting works on log-transformed values, which requires the
    /// fitted field to stay strictly positive over the window.
    #[error(
        "rate fit window contains non-positive `{field}` values; the quantity hit its \
         numerical floor, so there is no power law left to fit"
    )]
    NonPositiveField { field: &'static str },

    /// A kernel expansion with numerically zero RKHS norm has no margin.
    #[error("kernel expansion has (numerically) zero RKHS norm")]
    ZeroFunction,

    /// Multi-layer ascent restarted because the layer product collapsed,
    /// and ran out of restart budget.
    #[error("layer product stayed degenerate after {restarts} restarts")]
    DegenerateProduct { restarts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
