//! Calibration-aware diagnostics for pseudo-labelled regression.
//!
//! A trained classifier emits a calibrated probability `p` for a latent binary
//! group `G` that is observed only on a small labelled set. Downstream, the
//! partial association `tau` between `G` and an outcome `Y` (controlling for
//! covariates `X`) is estimated on the large unlabelled set, either from the
//! score directly (the *soft* estimator) or after thresholding it into a hard
//! pseudo-label. This crate computes:
//!
//! - the residual score variance `V* = E[(p - E[p|X])^2]`, which governs both
//!   identification and precision of the soft moment estimator,
//! - the per-threshold attenuation factor `kappa` that binarisation induces in
//!   the downstream coefficient,
//! - soft / hard / confident-subset / supervised estimators of `tau` with
//!   sandwich standard errors,
//! - a sensitivity bound for the soft estimator under bounded calibration
//!   drift,
//! - the `(V*, kappa)` decision rule combining all of the above, and
//! - a seeded Monte Carlo harness for the five synthetic experiments.
//!
//! The crate is `no_std`-compatible (with `alloc`); file formats, CSV
//! ingestion and the command line live in the companion `pseudocal-cli`
//! crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod calibration;
pub mod data;
pub mod diagnostic;
pub mod error;
pub mod estimators;
pub mod learners;
pub mod linalg;
pub mod prob;
pub mod simulation;

pub use data::{
    extract_controls, make_folds, EstimatorMethod, FoldAssignment, LabelledSet, Residuals,
    TauEstimate, UnlabelledSet,
};
pub use diagnostic::{run_diagnostic, Decision, DiagnosticConfig, DiagnosticReport, LabelledContext};
pub use error::{Error, Result};
pub use estimators::EPSILON_V_STAR;
pub use learners::{Basis, LearnerConfig, Penalty};

/// Critical value of the nominal 95% Wald interval.
pub const WALD_Z: f64 = 1.96;
