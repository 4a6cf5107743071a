//! Error type shared by all modules.

use alloc::boxed::Box;
use alloc::string::String;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Fold count outside `2 <= k <= n`.
    #[error("invalid fold count k={k} for n={n} (need 2 <= k <= n)")]
    InvalidFoldCount { n: usize, k: usize },

    /// An operation received an empty input.
    #[error("empty input")]
    EmptyInput,

    /// Fewer rows than the operation requires.
    #[error("too few rows: got {got}, need at least {needed}")]
    TooFewRows { needed: usize, got: usize },

    /// Construction-time invariant violation on a data container or config.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// `X'X` (plus penalty) is not positive definite at lambda = 0.
    #[error("singular design matrix")]
    SingularDesign,

    /// A learner failed inside a cross-fitting fold.
    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    /// The residual score variance is (numerically) zero: `p` is a
    /// deterministic function of `X` and the moment equation carries no
    /// information about tau.
    #[error("residual score variance collapsed: V*hat = {v_star:.3e} <= {epsilon:.0e}")]
    VStarCollapse { v_star: f64, epsilon: f64 },

    /// Thresholding produced an all-zero or all-one pseudo-label, or a hard
    /// residual with no variance.
    #[error("degenerate threshold {threshold}: pseudo-label carries no variation")]
    DegenerateThreshold { threshold: f64 },

    /// The confident subset is below the configured size floor.
    #[error("confident subset too small: |C| = {size} < {floor}")]
    ConfidentSubsetTooSmall { size: usize, floor: usize },

    /// The label-leak test needs at least one control column.
    #[error("label-leak test is degenerate: no X columns to test")]
    DegenerateLeakTest,

    /// A Monte Carlo aggregation step received an invalid value.
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

impl Error {
    pub(crate) fn in_fold(fold: usize, source: Error) -> Self {
        Error::InFold {
            fold,
            source: Box::new(source),
        }
    }
}
