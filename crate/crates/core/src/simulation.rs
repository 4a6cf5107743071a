//! Synthetic data generator, calibration-drift shapes, trained-classifier
//! modes, and the seeded Monte Carlo runners for the five experiments.
//!
//! Determinism: every (cell, replication) pair draws from its own ChaCha8
//! stream seeded by a SplitMix64 hash of `(master_seed, cell, replication)`,
//! so tables are bit-identical across runs and independent of the parallel
//! schedule.
//!
//! Nuisance conventions per experiment. P1 and P2 inject the oracle
//! nuisances `r(X)` and `mu(X) + tau r(X)` (the hard pseudo-label is still
//! residualised by cross-fitted OLS, matching `population_kappa`); P3 feeds
//! the confident-subset estimator its feasible full-sample outcome nuisance
//! and reports the oracle-nuisance soft estimator as the baseline; P4 runs
//! the fully feasible soft estimator, whose fitted outcome nuisance absorbs
//! the X-measurable part of the drift; P5 is feasible end to end because the
//! trained classifier is the object under study.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::calibration::{fit_isotonic, label_leak_test};
use crate::data::{
    extract_controls, make_folds, FoldAssignment, LabelledSet, TauEstimate, UnlabelledSet,
};
use crate::error::{Error, Result};
use crate::estimators::{
    confident_subset_with_m, hard_estimator_with_nuisances, residual_variance,
    soft_estimator_with_nuisances, supervised_baseline,
};
use crate::learners::{
    cross_fit_predict, fit_logistic_basis, Basis, LearnerConfig, NuisanceFit, PROB_CLIP,
};
use crate::linalg::Matrix;
use crate::prob::normal_two_sided_p;

// ---------------------------------------------------------------------------
// generator configuration
// ---------------------------------------------------------------------------

/// Synthetic generator: `X ~ N(0, I_3)`, logistic propensity
/// `r(X) = sigmoid(beta_r . X)`, score `p | X ~ Beta(r k0, (1-r) k0)` with
/// `k0 = (1 - sigma_u^2) / sigma_u^2`, latent group `G ~ Bernoulli(p)` and
/// outcome `Y = beta_m . X + tau G + noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpParams {
    pub n: usize,
    pub tau: f64,
    pub sigma_u: f64,
    pub beta_r: [f64; 3],
    pub beta_m: [f64; 3],
    pub noise_sd: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            n: 3000,
            tau: 1.0,
            sigma_u: 0.30,
            beta_r: [0.6, -0.4, 0.3],
            beta_m: [1.0, 0.5, -0.5],
            noise_sd: 1.0,
        }
    }
}

impl DgpParams {
    /// Beta concentration implied by `sigma_u`; yields
    /// `Var(p | X) = sigma_u^2 r(X)(1 - r(X))` exactly.
    pub fn kappa0(&self) -> f64 {
        (1.0 - self.sigma_u * self.sigma_u) / (self.sigma_u * self.sigma_u)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 < self.sigma_u && self.sigma_u < 1.0) {
            return Err(Error::InvalidValue(format!(
                "sigma_u {} outside (0,1)",
                self.sigma_u
            )));
        }
        if self.noise_sd <= 0.0 {
            return Err(Error::InvalidValue("noise_sd must be positive".into()));
        }
        if self.n < 2 {
            return Err(Error::TooFewRows {
                needed: 2,
                got: self.n,
            });
        }
        Ok(())
    }
}

/// Bounded calibration-drift shape for `E[G | p, X] = clip(p + eta, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftShape {
    None,
    /// `delta * sgn(2p - 1)`, the shape attaining the sensitivity bound.
    WorstCase,
    /// `delta * (2p - 1)`.
    Linear,
    /// `delta * sin(pi p)`.
    Symmetric,
}

impl DriftShape {
    pub fn parse(s: &str) -> Result<DriftShape> {
        match s {
            "none" => Ok(DriftShape::None),
            "worst_case" => Ok(DriftShape::WorstCase),
            "linear" => Ok(DriftShape::Linear),
            "symmetric" => Ok(DriftShape::Symmetric),
            other => Err(Error::InvalidValue(format!("unknown drift shape {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriftShape::None => "none",
            DriftShape::WorstCase => "worst_case",
            DriftShape::Linear => "linear",
            DriftShape::Symmetric => "symmetric",
        }
    }
}

/// Drift shape with magnitude; `|eta| <= delta` holds for every shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    pub shape: DriftShape,
    pub delta: f64,
}

impl DriftSpec {
    pub fn none() -> Self {
        DriftSpec {
            shape: DriftShape::None,
            delta: 0.0,
        }
    }
}

/// Drift value at a score.
pub fn drift_eta(shape: DriftShape, delta: f64, p: f64) -> f64 {
    match shape {
        DriftShape::None => 0.0,
        DriftShape::WorstCase => {
            if 2.0 * p - 1.0 > 0.0 {
                delta
            } else if 2.0 * p - 1.0 < 0.0 {
                -delta
            } else {
                0.0
            }
        }
        DriftShape::Linear => delta * (2.0 * p - 1.0),
        DriftShape::Symmetric => delta * (core::f64::consts::PI * p).sin(),
    }
}

/// How the observed score is produced in experiment P5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierMode {
    /// The DGP's own Beta draw (used everywhere outside P5).
    OracleScore,
    /// Logistic regression on the poly2 basis trained on half the labelled
    /// set, isotonically recalibrated on the other half.
    DeterministicFit,
    /// As `DeterministicFit`, then a single Beta draw with conditional mean
    /// `p_hat` and variance `sigma_pp^2 p_hat (1 - p_hat)`.
    PosteriorPredictive { sigma_pp: f64 },
}

/// One draw from the generator. The unlabelled view hides `G`; the labelled
/// view reveals it; the oracle propensity is retained for oracle-nuisance
/// evaluation.
#[derive(Debug, Clone)]
pub struct DgpSample {
    pub unlabelled: UnlabelledSet,
    pub labelled: LabelledSet,
    pub r_oracle: Vec<f64>,
    pub g: Vec<u8>,
}

fn sigmoid(z: f64) -> f64 {
    crate::learners::sigmoid(z)
}

/// Draw `params.n` rows; deterministic in `rng` state.
pub fn sample_dgp_rng(
    params: &DgpParams,
    drift: &DriftSpec,
    rng: &mut ChaCha8Rng,
) -> Result<DgpSample> {
    params.validate()?;
    let n = params.n;
    let k0 = params.kappa0();
    let mut w = Matrix::zeros(n, 3);
    let mut p = Vec::with_capacity(n);
    let mut r_oracle = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let x0: f64 = rng.sample(StandardNormal);
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        w.set(i, 0, x0);
        w.set(i, 1, x1);
        w.set(i, 2, x2);
        let r = sigmoid(params.beta_r[0] * x0 + params.beta_r[1] * x1 + params.beta_r[2] * x2);
        let r = r.clamp(1e-12, 1.0 - 1e-12);
        let beta = Beta::new(r * k0, (1.0 - r) * k0)
            .map_err(|e| Error::InvalidValue(format!("beta draw: {e}")))?;
        let pi: f64 = beta.sample(rng);
        let pi = pi.clamp(0.0, 1.0);
        let g_mean = (pi + drift_eta(drift.shape, drift.delta, pi)).clamp(0.0, 1.0);
        let gi = u8::from(rng.random::<f64>() < g_mean);
        let eps: f64 = rng.sample(StandardNormal);
        let yi = params.beta_m[0] * x0
            + params.beta_m[1] * x1
            + params.beta_m[2] * x2
            + params.tau * gi as f64
            + params.noise_sd * eps;
        p.push(pi);
        r_oracle.push(r);
        g.push(gi);
        y.push(yi);
    }
    let x_cols = vec![0usize, 1, 2];
    Ok(DgpSample {
        unlabelled: UnlabelledSet::new(w.clone(), x_cols.clone(), p, y.clone())?,
        labelled: LabelledSet::new(w, x_cols, g.clone(), y)?,
        r_oracle,
        g,
    })
}

/// Draw `params.n` rows; fully determined by `rng_seed`.
pub fn sample_dgp(params: &DgpParams, drift: &DriftSpec, rng_seed: u64) -> Result<DgpSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_dgp_rng(params, drift, &mut rng)
}

// ---------------------------------------------------------------------------
// seeded stream plumbing
// ---------------------------------------------------------------------------

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one (cell, replication) pair.
pub(crate) fn replication_rng(master_seed: u64, cell: u64, replication: u64) -> ChaCha8Rng {
    let mut state = master_seed
        ^ cell.wrapping_mul(0xa076_1d64_78bd_642f)
        ^ replication.wrapping_mul(0xe703_7ed1_a0b4_28db);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

fn map_reps<T: Send>(r: usize, sequential: bool, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if !sequential {
            use rayon::prelude::*;
            return (0..r).into_par_iter().map(&f).collect();
        }
    }
    let _ = sequential;
    (0..r).map(f).collect()
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

/// Monte Carlo summary of a cell: `mse = bias^2 + mc_variance` holds exactly
/// over the same replication set (variance divisor is the replication count).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McSummary {
    pub mean_estimate: f64,
    pub mc_variance: f64,
    pub mc_se_of_mean: f64,
    pub bias: f64,
    pub mse: f64,
    pub coverage_95: f64,
    pub replications: usize,
}

/// Aggregate a cell's estimates against the true value.
pub fn mc_aggregate(estimates: &[TauEstimate], true_tau: f64) -> Result<McSummary> {
    let r = estimates.len();
    if r == 0 {
        return Err(Error::EmptyInput);
    }
    let mean = estimates.iter().map(|e| e.tau_hat).sum::<f64>() / r as f64;
    let var = estimates
        .iter()
        .map(|e| (e.tau_hat - mean) * (e.tau_hat - mean))
        .sum::<f64>()
        / r as f64;
    let bias = mean - true_tau;
    let covered = estimates.iter().filter(|e| e.covers(true_tau)).count();
    Ok(McSummary {
        mean_estimate: mean,
        mc_variance: var,
        mc_se_of_mean: (var / r as f64).sqrt(),
        bias,
        mse: bias * bias + var,
        coverage_95: covered as f64 / r as f64,
        replications: r,
    })
}

/// One cell of the Bonferroni-corrected z-test family.
#[derive(Debug, Clone, PartialEq)]
pub struct ZTestCell {
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BonferroniResult {
    pub cells: Vec<ZTestCell>,
    pub any_rejection: bool,
}

/// Two-sided z-tests of `observed == predicted` per cell, with the family
/// rejection level `alpha / m`.
pub fn bonferroni_ztest(
    observed: &[f64],
    predicted: &[f64],
    mc_ses: &[f64],
    alpha: f64,
) -> Result<BonferroniResult> {
    let m = observed.len();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    if predicted.len() != m || mc_ses.len() != m {
        return Err(Error::InvalidData(
            "observed, predicted, mc_ses must have equal length".to_string(),
        ));
    }
    if let Some(bad) = mc_ses.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::InvalidValue(format!(
            "Monte Carlo SE must be positive, got {bad}"
        )));
    }
    let level = alpha / m as f64;
    let cells: Vec<ZTestCell> = (0..m)
        .map(|i| {
            let z = (observed[i] - predicted[i]) / mc_ses[i];
            let p_value = normal_two_sided_p(z);
            ZTestCell {
                z,
                p_value,
                reject: p_value < level,
            }
        })
        .collect();
    let any_rejection = cells.iter().any(|c| c.reject);
    Ok(BonferroniResult {
        cells,
        any_rejection,
    })
}

// ---------------------------------------------------------------------------
// population attenuation
// ---------------------------------------------------------------------------

/// Attenuation factor from one large oracle draw: exact soft residuals
/// `p - r(X)`, hard residuals from the cross-fitted OLS convention.
pub fn population_kappa(
    params: &DgpParams,
    threshold: f64,
    n_oracle: usize,
    seed: u64,
) -> Result<f64> {
    if n_oracle < 100_000 {
        return Err(Error::TooFewRows {
            needed: 100_000,
            got: n_oracle,
        });
    }
    let mut big = *params;
    big.n = n_oracle;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = sample_dgp_rng(&big, &DriftSpec::none(), &mut rng)?;
    let u = &sample.unlabelled;
    let folds = make_folds(n_oracle, 5, rng.random())?;
    let x = extract_controls(u);
    let gt: Vec<f64> = u
        .p()
        .iter()
        .map(|&v| f64::from(v > threshold))
        .collect();
    let ones = gt.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n_oracle {
        return Err(Error::DegenerateThreshold { threshold });
    }
    let e_hard = cross_fit_predict(&x, &gt, &folds, &LearnerConfig::hard_residualiser())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n_oracle {
        let ah = gt[i] - e_hard.oof_predictions[i];
        let as_ = u.p()[i] - sample.r_oracle[i];
        num += ah * as_;
        den += ah * ah;
    }
    if den <= 0.0 {
        return Err(Error::DegenerateThreshold { threshold });
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// experiment runners
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl ExperimentId {
    pub fn parse(s: &str) -> Result<ExperimentId> {
        match s {
            "p1" => Ok(ExperimentId::P1),
            "p2" => Ok(ExperimentId::P2),
            "p3" => Ok(ExperimentId::P3),
            "p4" => Ok(ExperimentId::P4),
            "p5" => Ok(ExperimentId::P5),
            other => Err(Error::InvalidValue(format!("unknown experiment {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::P1 => "p1",
            ExperimentId::P2 => "p2",
            ExperimentId::P3 => "p3",
            ExperimentId::P4 => "p4",
            ExperimentId::P5 => "p5",
        }
    }

    fn desk_replications(&self) -> usize {
        match self {
            ExperimentId::P1 => 200,
            ExperimentId::P2 => 500,
            ExperimentId::P3 => 200,
            ExperimentId::P4 => 150,
            ExperimentId::P5 => 100,
        }
    }

    fn paper_replications(&self) -> usize {
        match self {
            ExperimentId::P1 => 400,
            ExperimentId::P2 => 1000,
            ExperimentId::P3 => 400,
            ExperimentId::P4 => 300,
            ExperimentId::P5 => 250,
        }
    }
}

/// Overrides for an experiment run. Desk-scale replication counts are the
/// defaults; `paper_scale` switches to the published counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExperimentConfig {
    pub replications: Option<usize>,
    pub n_u: Option<usize>,
    pub paper_scale: bool,
    /// Force sequential replication order (results are identical either way).
    pub sequential: bool,
}

impl ExperimentConfig {
    fn replications_for(&self, id: ExperimentId) -> usize {
        self.replications.unwrap_or(if self.paper_scale {
            id.paper_replications()
        } else {
            id.desk_replications()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct P1Row {
    pub threshold: f64,
    pub kappa_pred: f64,
    pub soft_mean: f64,
    pub hard_mean: f64,
    pub mc_se: f64,
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2Row {
    pub sigma_u: f64,
    pub v_star: f64,
    pub sandwich_var: f64,
    pub mc_var: f64,
    pub coverage_95: f64,
    pub mse_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P3Row {
    pub threshold: f64,
    pub kappa_fm: f64,
    pub mean_c: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
    pub mse_ratio: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P4Row {
    pub shape: DriftShape,
    pub delta: f64,
    pub emp_bias: f64,
    pub bound: f64,
    pub ratio: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P5Row {
    pub n_l: usize,
    pub v_star_deterministic: f64,
    pub v_star_posterior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentResult {
    P1(Vec<P1Row>),
    P2(Vec<P2Row>),
    P3 {
        rows: Vec<P3Row>,
        soft_baseline_mse: f64,
    },
    P4(Vec<P4Row>),
    P5(Vec<P5Row>),
}

/// Plain tabular view for CSV emission.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn fnum(v: f64) -> String {
    format!("{v}")
}

impl ExperimentResult {
    pub fn to_table(&self) -> Table {
        match self {
            ExperimentResult::P1(rows) => Table {
                columns: [
                    "tau_thr",
                    "kappa_pred",
                    "soft_mean",
                    "hard_mean",
                    "mc_se",
                    "z",
                    "p_value",
                    "reject",
                    "n_failed",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            fnum(r.threshold),
                            fnum(r.kappa_pred),
                            fnum(r.soft_mean),
                            fnum(r.hard_mean),
                            fnum(r.mc_se),
                            fnum(r.z),
                            fnum(r.p_value),
                            r.reject.to_string(),
                            r.n_failed.to_string(),
                        ]
                    })
                    .collect(),
            },
            ExperimentResult::P2(rows) => Table {
                columns: [
                    "sigma_u",
                    "v_star",
                    "sandwich_var",
                    "mc_var",
                    "coverage_95",
                    "mse_ratio",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            fnum(r.sigma_u),
                            fnum(r.v_star),
                            fnum(r.sandwich_var),
                            fnum(r.mc_var),
                            fnum(r.coverage_95),
                            fnum(r.mse_ratio),
                        ]
                    })
                    .collect(),
            },
            ExperimentResult::P3 {
                rows,
                soft_baseline_mse,
            } => Table {
                columns: [
                    "tau_thr",
                    "kappa_fm",
                    "mean_c",
                    "bias_sq",
                    "variance",
                    "mse",
                    "mse_ratio",
                    "soft_baseline_mse",
                    "n_failed",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            fnum(r.threshold),
                            fnum(r.kappa_fm),
                            fnum(r.mean_c),
                            fnum(r.bias_sq),
                            fnum(r.variance),
                            fnum(r.mse),
                            fnum(r.mse_ratio),
                            fnum(*soft_baseline_mse),
                            r.n_failed.to_string(),
                        ]
                    })
                    .collect(),
            },
            ExperimentResult::P4(rows) => Table {
                columns: ["shape", "delta", "emp_bias", "bound", "ratio", "n_failed"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.shape.name().to_string(),
                            fnum(r.delta),
                            fnum(r.emp_bias),
                            fnum(r.bound),
                            fnum(r.ratio),
                            r.n_failed.to_string(),
                        ]
                    })
                    .collect(),
            },
            ExperimentResult::P5(rows) => Table {
                columns: ["n_l", "v_star_deterministic", "v_star_posterior"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.n_l.to_string(),
                            fnum(r.v_star_deterministic),
                            fnum(r.v_star_posterior),
                        ]
                    })
                    .collect(),
            },
        }
    }
}

/// Run one experiment; bit-identical for a fixed `master_seed` regardless of
/// the parallel schedule.
pub fn run_experiment(
    id: ExperimentId,
    cfg: &ExperimentConfig,
    master_seed: u64,
) -> Result<ExperimentResult> {
    match id {
        ExperimentId::P1 => run_p1(cfg, master_seed),
        ExperimentId::P2 => run_p2(cfg, master_seed),
        ExperimentId::P3 => run_p3(cfg, master_seed),
        ExperimentId::P4 => run_p4(cfg, master_seed),
        ExperimentId::P5 => run_p5(cfg, master_seed),
    }
}

const ORACLE_REP: u64 = u64::MAX;
pub(crate) const P1_THRESHOLDS: [f64; 6] = [0.50, 0.60, 0.70, 0.80, 0.90, 0.95];
pub(crate) const P3_THRESHOLDS: [f64; 6] = [0.55, 0.65, 0.75, 0.85, 0.90, 0.95];
pub(crate) const P2_SIGMAS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub(crate) const P4_DELTAS: [f64; 4] = [0.05, 0.10, 0.15, 0.20];
pub(crate) const P5_NLS: [usize; 4] = [200, 500, 1000, 2000];
pub(crate) const SIGMA_PP_DEFAULT: f64 = 0.30;

fn cell_tag(exp: u8, idx: usize) -> u64 {
    ((exp as u64) << 56) | idx as u64
}

/// Oracle nuisance fits for a sample: `r(X)` and `mu(X) + tau r(X)`.
fn oracle_nuisances(
    sample: &DgpSample,
    params: &DgpParams,
    folds: &FoldAssignment,
) -> (NuisanceFit, NuisanceFit) {
    let r_fit = NuisanceFit::from_values(sample.r_oracle.clone(), folds.clone(), "oracle");
    let w = sample.unlabelled.w();
    let m: Vec<f64> = (0..sample.unlabelled.len())
        .map(|i| {
            let row = w.row(i);
            params.beta_m[0] * row[0]
                + params.beta_m[1] * row[1]
                + params.beta_m[2] * row[2]
                + params.tau * sample.r_oracle[i]
        })
        .collect();
    let m_fit = NuisanceFit::from_values(m, folds.clone(), "oracle");
    (r_fit, m_fit)
}

fn run_p1(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentResult> {
    let reps = cfg.replications_for(ExperimentId::P1);
    let mut params = DgpParams::default();
    if let Some(n) = cfg.n_u {
        params.n = n;
    }
    let mut rows = Vec::with_capacity(P1_THRESHOLDS.len());
    let mut observed = Vec::new();
    let mut predicted = Vec::new();
    let mut mc_ses = Vec::new();
    let mut partial: Vec<(f64, f64, f64, f64, usize)> = Vec::new();
    for (ci, &threshold) in P1_THRESHOLDS.iter().enumerate() {
        let cell = cell_tag(1, ci);
        let kappa_pred = population_kappa(
            &params,
            threshold,
            1_000_000,
            splitmix64(&mut (master_seed ^ cell ^ ORACLE_REP)),
        )?;
        let outcomes = map_reps(reps, cfg.sequential, |rep| -> Result<(f64, f64)> {
            let mut rng = replication_rng(master_seed, cell, rep as u64);
            let sample = sample_dgp_rng(&params, &DriftSpec::none(), &mut rng)?;
            let folds = make_folds(params.n, 5, rng.random())?;
            let (r_fit, m_fit) = oracle_nuisances(&sample, &params, &folds);
            let x = extract_controls(&sample.unlabelled);
            let gt: Vec<f64> = sample
                .unlabelled
                .p()
                .iter()
                .map(|&v| f64::from(v > threshold))
                .collect();
            let ones = gt.iter().filter(|&&v| v == 1.0).count();
            if ones == 0 || ones == gt.len() {
                return Err(Error::DegenerateThreshold { threshold });
            }
            let e_hard =
                cross_fit_predict(&x, &gt, &folds, &LearnerConfig::hard_residualiser())?;
            let hard =
                hard_estimator_with_nuisances(&sample.unlabelled, threshold, &m_fit, &e_hard)?;
            let soft = soft_estimator_with_nuisances(&sample.unlabelled, r_fit, m_fit)?;
            Ok((soft.tau.tau_hat, hard.tau_hat))
        });
        let mut softs = Vec::new();
        let mut hards = Vec::new();
        let mut n_failed = 0;
        for o in outcomes {
            match o {
                Ok((s, h)) => {
                    softs.push(s);
                    hards.push(h);
                }
                Err(_) => n_failed += 1,
            }
        }
        if hards.is_empty() {
            return Err(Error::DegenerateThreshold { threshold });
        }
        let r = hards.len() as f64;
        let hard_mean = hards.iter().sum::<f64>() / r;
        let hard_var = hards.iter().map(|h| (h - hard_mean) * (h - hard_mean)).sum::<f64>() / r;
        let mc_se = (hard_var / r).sqrt();
        let soft_mean = softs.iter().sum::<f64>() / r;
        observed.push(hard_mean);
        predicted.push(kappa_pred * params.tau);
        mc_ses.push(mc_se);
        partial.push((threshold, kappa_pred, soft_mean, hard_mean, n_failed));
    }
    let family = bonferroni_ztest(&observed, &predicted, &mc_ses, 0.05)?;
    for (i, (threshold, kappa_pred, soft_mean, hard_mean, n_failed)) in
        partial.into_iter().enumerate()
    {
        rows.push(P1Row {
            threshold,
            kappa_pred,
            soft_mean,
            hard_mean,
            mc_se: mc_ses[i],
            z: family.cells[i].z,
            p_value: family.cells[i].p_value,
            reject: family.cells[i].reject,
            n_failed,
        });
    }
    Ok(ExperimentResult::P1(rows))
}

fn run_p2(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentResult> {
    let reps = cfg.replications_for(ExperimentId::P2);
    let n_u = cfg.n_u.unwrap_or(2000);
    let n_l = 500;
    let mut rows = Vec::new();
    for (ci, &sigma_u) in P2_SIGMAS.iter().enumerate() {
        let cell = cell_tag(2, ci);
        let params = DgpParams {
            n: n_u,
            sigma_u,
            ..DgpParams::default()
        };
        let l_params = DgpParams {
            n: n_l,
            sigma_u,
            ..DgpParams::default()
        };
        let outcomes = map_reps(
            reps,
            cfg.sequential,
            |rep| -> Result<(TauEstimate, f64, f64, TauEstimate)> {
                let mut rng = replication_rng(master_seed, cell, rep as u64);
                let sample = sample_dgp_rng(&params, &DriftSpec::none(), &mut rng)?;
                let folds = make_folds(n_u, 5, rng.random())?;
                let (r_fit, m_fit) = oracle_nuisances(&sample, &params, &folds);
                let soft = soft_estimator_with_nuisances(&sample.unlabelled, r_fit, m_fit)?;
                let lab = sample_dgp_rng(&l_params, &DriftSpec::none(), &mut rng)?;
                let sup = supervised_baseline(&lab.labelled)?;
                Ok((
                    soft.tau.clone(),
                    soft.v_star_hat,
                    soft.tau.se * soft.tau.se,
                    sup,
                ))
            },
        );
        let mut softs = Vec::new();
        let mut v_stars = Vec::new();
        let mut sandwiches = Vec::new();
        let mut sups = Vec::new();
        for o in outcomes {
            let (soft, v, s2, sup) = o?;
            softs.push(soft);
            v_stars.push(v);
            sandwiches.push(s2);
            sups.push(sup);
        }
        let soft_sum = mc_aggregate(&softs, params.tau)?;
        let sup_sum = mc_aggregate(&sups, params.tau)?;
        rows.push(P2Row {
            sigma_u,
            v_star: v_stars.iter().sum::<f64>() / v_stars.len() as f64,
            sandwich_var: sandwiches.iter().sum::<f64>() / sandwiches.len() as f64,
            mc_var: soft_sum.mc_variance,
            coverage_95: soft_sum.coverage_95,
            mse_ratio: soft_sum.mse / sup_sum.mse,
        });
    }
    Ok(ExperimentResult::P2(rows))
}

fn run_p3(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentResult> {
    let reps = cfg.replications_for(ExperimentId::P3);
    let mut params = DgpParams::default();
    if let Some(n) = cfg.n_u {
        params.n = n;
    }
    let cell = cell_tag(3, 0);
    struct Rep {
        soft: TauEstimate,
        per_threshold: Vec<Option<(TauEstimate, usize, f64)>>,
    }
    let outcomes = map_reps(reps, cfg.sequential, |rep| -> Result<Rep> {
        let mut rng = replication_rng(master_seed, cell, rep as u64);
        let sample = sample_dgp_rng(&params, &DriftSpec::none(), &mut rng)?;
        let folds = make_folds(params.n, 5, rng.random())?;
        let u = &sample.unlabelled;
        let x = extract_controls(u);
        let learner = LearnerConfig::nuisance_default();
        let m_hat = cross_fit_predict(&x, u.y(), &folds, &learner)?;
        // oracle-nuisance soft baseline, matching the P1/P2 treatment
        let (r_fit, m_fit) = oracle_nuisances(&sample, &params, &folds);
        let soft = soft_estimator_with_nuisances(u, r_fit, m_fit)?;
        let per_threshold = P3_THRESHOLDS
            .iter()
            .map(|&t| {
                confident_subset_with_m(u, t, &folds, &m_hat)
                    .ok()
                    .map(|c| (c.tau, c.subset_size, c.kappa_fm))
            })
            .collect();
        Ok(Rep {
            soft: soft.tau,
            per_threshold,
        })
    });
    let mut soft_taus = Vec::new();
    let mut cells: Vec<(Vec<TauEstimate>, Vec<usize>, Vec<f64>, usize)> =
        P3_THRESHOLDS.iter().map(|_| (Vec::new(), Vec::new(), Vec::new(), 0)).collect();
    for o in outcomes {
        let rep = o?;
        soft_taus.push(rep.soft);
        for (slot, got) in cells.iter_mut().zip(rep.per_threshold) {
            match got {
                Some((tau, size, kfm)) => {
                    slot.0.push(tau);
                    slot.1.push(size);
                    slot.2.push(kfm);
                }
                None => slot.3 += 1,
            }
        }
    }
    let soft_sum = mc_aggregate(&soft_taus, params.tau)?;
    let mut rows = Vec::new();
    for (i, &threshold) in P3_THRESHOLDS.iter().enumerate() {
        let (taus, sizes, kfms, n_failed) = &cells[i];
        if taus.is_empty() {
            return Err(Error::DegenerateThreshold { threshold });
        }
        let summ = mc_aggregate(taus, params.tau)?;
        rows.push(P3Row {
            threshold,
            kappa_fm: kfms.iter().sum::<f64>() / kfms.len() as f64,
            mean_c: sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
            bias_sq: summ.bias * summ.bias,
            variance: summ.mc_variance,
            mse: summ.mse,
            mse_ratio: summ.mse / soft_sum.mse,
            n_failed: *n_failed,
        });
    }
    Ok(ExperimentResult::P3 {
        rows,
        soft_baseline_mse: soft_sum.mse,
    })
}

fn run_p4(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentResult> {
    let reps = cfg.replications_for(ExperimentId::P4);
    let mut params = DgpParams::default();
    if let Some(n) = cfg.n_u {
        params.n = n;
    }
    // drift-free oracle quantities for the bound, from one large draw
    let mut oracle_params = params;
    oracle_params.n = 1_000_000;
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(splitmix64(
        &mut (master_seed ^ cell_tag(4, 99) ^ ORACLE_REP),
    ));
    let oracle = sample_dgp_rng(&oracle_params, &DriftSpec::none(), &mut oracle_rng)?;
    let n_o = oracle_params.n as f64;
    let mean_abs: f64 = oracle
        .unlabelled
        .p()
        .iter()
        .map(|&p| (2.0 * p - 1.0).abs())
        .sum::<f64>()
        / n_o;
    let v_star_oracle = residual_variance(oracle.unlabelled.p(), &oracle.r_oracle);

    let shapes = [DriftShape::WorstCase, DriftShape::Linear, DriftShape::Symmetric];
    let learner = LearnerConfig::nuisance_default();
    let mut rows = Vec::new();
    for (si, &shape) in shapes.iter().enumerate() {
        for (di, &delta) in P4_DELTAS.iter().enumerate() {
            let cell = cell_tag(4, si * P4_DELTAS.len() + di);
            let drift = DriftSpec { shape, delta };
            let outcomes = map_reps(reps, cfg.sequential, |rep| -> Result<f64> {
                let mut rng = replication_rng(master_seed, cell, rep as u64);
                let sample = sample_dgp_rng(&params, &drift, &mut rng)?;
                let folds = make_folds(params.n, 5, rng.random())?;
                let u = &sample.unlabelled;
                let x = extract_controls(u);
                let r_hat = cross_fit_predict(&x, u.p(), &folds, &learner)?;
                let m_hat = cross_fit_predict(&x, u.y(), &folds, &learner)?;
                Ok(soft_estimator_with_nuisances(u, r_hat, m_hat)?.tau.tau_hat)
            });
            let mut taus = Vec::new();
            let mut n_failed = 0;
            for o in outcomes {
                match o {
                    Ok(t) => taus.push(t),
                    Err(_) => n_failed += 1,
                }
            }
            if taus.is_empty() {
                return Err(Error::InvalidValue("all P4 replications failed".into()));
            }
            let emp_bias = taus.iter().sum::<f64>() / taus.len() as f64 - params.tau;
            let bound =
                params.tau.abs() * delta * mean_abs / (2.0 * v_star_oracle);
            rows.push(P4Row {
                shape,
                delta,
                emp_bias,
                bound,
                ratio: emp_bias.abs() / bound,
                n_failed,
            });
        }
    }
    Ok(ExperimentResult::P4(rows))
}

/// Trained classifier of P5: logistic regression on the poly2 basis fit on
/// the first half of the labelled set, isotonic recalibration on the second
/// half.
fn train_p5_classifier(lab: &LabelledSet) -> Result<impl Fn(&[f64]) -> f64> {
    let n = lab.len();
    let half = n / 2;
    let first: Vec<usize> = (0..half).collect();
    let second: Vec<usize> = (half..n).collect();
    let x = extract_controls(lab);
    let x_first = x.select_rows(&first);
    let g_first: Vec<u8> = first.iter().map(|&i| lab.g()[i]).collect();
    let logit = fit_logistic_basis(&x_first, &g_first, Basis::Poly2, 200, 1e-8)?;
    let x_second = x.select_rows(&second);
    let scores_second = logit.predict(&x_second);
    let g_second: Vec<u8> = second.iter().map(|&i| lab.g()[i]).collect();
    let iso = fit_isotonic(&scores_second, &g_second)?;
    Ok(move |row: &[f64]| {
        let raw = logit.predict_row(row);
        iso.apply(raw).clamp(PROB_CLIP.0, PROB_CLIP.1)
    })
}

fn run_p5(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentResult> {
    let reps = cfg.replications_for(ExperimentId::P5);
    let n_u = cfg.n_u.unwrap_or(3000);
    let sigma_pp = SIGMA_PP_DEFAULT;
    let kpp = (1.0 - sigma_pp * sigma_pp) / (sigma_pp * sigma_pp);
    let learner = LearnerConfig::nuisance_default();
    let mut rows = Vec::new();
    for (ni, &n_l) in P5_NLS.iter().enumerate() {
        let mut v_means = [0.0f64; 2];
        for (mi, posterior) in [false, true].into_iter().enumerate() {
            let cell = cell_tag(5, ni * 2 + mi);
            let outcomes = map_reps(reps, cfg.sequential, |rep| -> Result<f64> {
                let mut rng = replication_rng(master_seed, cell, rep as u64);
                let u_params = DgpParams {
                    n: n_u,
                    ..DgpParams::default()
                };
                let l_params = DgpParams {
                    n: n_l,
                    ..DgpParams::default()
                };
                let usample = sample_dgp_rng(&u_params, &DriftSpec::none(), &mut rng)?;
                let lsample = sample_dgp_rng(&l_params, &DriftSpec::none(), &mut rng)?;
                let classifier = train_p5_classifier(&lsample.labelled)?;
                let w = usample.unlabelled.w();
                let mut p_obs = Vec::with_capacity(n_u);
                for i in 0..n_u {
                    let p_hat = classifier(w.row(i));
                    let p = if posterior {
                        let beta = Beta::new(p_hat * kpp, (1.0 - p_hat) * kpp)
                            .map_err(|e| Error::InvalidValue(format!("beta draw: {e}")))?;
                        let v: f64 = beta.sample(&mut rng);
                        v.clamp(0.0, 1.0)
                    } else {
                        p_hat
                    };
                    p_obs.push(p);
                }
                let folds = make_folds(n_u, 5, rng.random())?;
                let x = extract_controls(&usample.unlabelled);
                let r_hat = cross_fit_predict(&x, &p_obs, &folds, &learner)?;
                Ok(residual_variance(&p_obs, &r_hat.oof_predictions))
            });
            let mut vs = Vec::new();
            for o in outcomes {
                vs.push(o?);
            }
            v_means[mi] = vs.iter().sum::<f64>() / vs.len() as f64;
        }
        rows.push(P5Row {
            n_l,
            v_star_deterministic: v_means[0],
            v_star_posterior: v_means[1],
        });
    }
    Ok(ExperimentResult::P5(rows))
}

/// Rejection rate of the label-leak test over seeded replications, used by
/// the acceptance suite: `leak_strength` scales the extra `X`-dependence of
/// `E[G | p, X]` (zero gives the size of the test).
pub fn leak_test_rejection_rate(
    replications: usize,
    n_l: usize,
    leak_strength: f64,
    master_seed: u64,
) -> Result<f64> {
    let params = DgpParams {
        n: n_l,
        ..DgpParams::default()
    };
    let cell = cell_tag(7, u8::from(leak_strength != 0.0) as usize);
    let outcomes = map_reps(replications, false, |rep| -> Result<bool> {
        let mut rng = replication_rng(master_seed, cell, rep as u64);
        let sample = sample_dgp_rng(&params, &DriftSpec::none(), &mut rng)?;
        let u = &sample.unlabelled;
        let g: Vec<u8> = if leak_strength == 0.0 {
            sample.g.clone()
        } else {
            (0..n_l)
                .map(|i| {
                    let mean =
                        (u.p()[i] + leak_strength * u.w().get(i, 0)).clamp(0.0, 1.0);
                    u8::from(rng.random::<f64>() < mean)
                })
                .collect()
        };
        let x = extract_controls(u);
        let res = label_leak_test(u.p(), &x, &g)?;
        Ok(res.p_value < 0.05)
    });
    let mut rejections = 0usize;
    let mut total = 0usize;
    for o in outcomes {
        if o? {
            rejections += 1;
        }
        total += 1;
    }
    Ok(rejections as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_eta_shapes() {
        assert_eq!(drift_eta(DriftShape::WorstCase, 0.1, 0.8), 0.1);
        assert_eq!(drift_eta(DriftShape::WorstCase, 0.1, 0.2), -0.1);
        assert!((drift_eta(DriftShape::Symmetric, 0.1, 0.5) - 0.1).abs() < 1e-15);
        assert_eq!(drift_eta(DriftShape::Linear, 0.1, 0.5), 0.0);
        assert_eq!(drift_eta(DriftShape::None, 0.7, 0.9), 0.0);
        assert!(DriftShape::parse("sawtooth").is_err());
    }

    #[test]
    fn drift_magnitude_is_bounded() {
        for shape in [DriftShape::WorstCase, DriftShape::Linear, DriftShape::Symmetric] {
            for i in 0..=100 {
                let p = i as f64 / 100.0;
                assert!(drift_eta(shape, 0.2, p).abs() <= 0.2 + 1e-15);
            }
        }
    }

    #[test]
    fn zero_delta_matches_no_drift_stream() {
        let params = DgpParams {
            n: 200,
            ..DgpParams::default()
        };
        let base = sample_dgp(&params, &DriftSpec::none(), 99).unwrap();
        for shape in [DriftShape::WorstCase, DriftShape::Linear, DriftShape::Symmetric] {
            let d = sample_dgp(&params, &DriftSpec { shape, delta: 0.0 }, 99).unwrap();
            assert_eq!(d.g, base.g);
            assert_eq!(d.unlabelled.p(), base.unlabelled.p());
            assert_eq!(d.unlabelled.y(), base.unlabelled.y());
        }
    }

    #[test]
    fn sample_is_deterministic_in_seed() {
        let params = DgpParams {
            n: 50,
            ..DgpParams::default()
        };
        let a = sample_dgp(&params, &DriftSpec::none(), 7).unwrap();
        let b = sample_dgp(&params, &DriftSpec::none(), 7).unwrap();
        assert_eq!(a.unlabelled.p(), b.unlabelled.p());
        assert_eq!(a.g, b.g);
    }

    #[test]
    fn mc_aggregate_two_point() {
        let ests = [
            TauEstimate::new(0.0, 0.1, 10, crate::data::EstimatorMethod::Soft),
            TauEstimate::new(2.0, 0.1, 10, crate::data::EstimatorMethod::Soft),
        ];
        let s = mc_aggregate(&ests, 1.0).unwrap();
        assert_eq!(s.bias, 0.0);
        assert_eq!(s.mc_variance, 1.0);
        assert_eq!(s.mse, 1.0);
        assert_eq!(s.coverage_95, 0.0);
        // identical estimates equal to true value
        let same = [
            TauEstimate::new(1.0, 0.2, 10, crate::data::EstimatorMethod::Soft),
            TauEstimate::new(1.0, 0.2, 10, crate::data::EstimatorMethod::Soft),
        ];
        let s2 = mc_aggregate(&same, 1.0).unwrap();
        assert_eq!(s2.bias, 0.0);
        assert_eq!(s2.mse, 0.0);
        assert_eq!(s2.coverage_95, 1.0);
        assert!(mc_aggregate(&[], 0.0).is_err());
    }

    #[test]
    fn bonferroni_cells() {
        let r = bonferroni_ztest(&[1.0, 1.1], &[1.0, 1.0], &[0.1, 0.1], 0.05).unwrap();
        assert_eq!(r.cells[0].z, 0.0);
        assert_eq!(r.cells[0].p_value, 1.0);
        assert!(!r.cells[0].reject);
        assert!((r.cells[1].z - 1.0).abs() < 1e-12);
        assert!(!r.any_rejection);
        assert!(bonferroni_ztest(&[1.0], &[1.0], &[0.0], 0.05).is_err());
        // paper z-to-p pairs
        let r = bonferroni_ztest(&[1.73, 0.87], &[0.0, 0.0], &[1.0, 1.0], 0.05).unwrap();
        assert!((r.cells[0].p_value - 0.0836).abs() < 3e-4);
        assert!((r.cells[1].p_value - 0.385).abs() < 1e-3);
    }

    #[test]
    fn replication_streams_are_independent_of_schedule() {
        let a = replication_rng(1, 2, 3);
        let b = replication_rng(1, 2, 3);
        let mut a = a;
        let mut b = b;
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        let mut c = replication_rng(1, 2, 4);
        assert_ne!(a.random::<u64>(), c.random::<u64>());
    }
}
