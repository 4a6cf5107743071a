//! Tabular containers for the labelled / unlabelled samples, fold assignment
//! for cross-fitting, and the estimate value types shared by all modules.
//!
//! The downstream controls `X` are represented as column indices into the
//! classifier feature matrix `W`, so the structural requirement that `X` is a
//! (possibly strict) subset of `W` cannot be violated by construction. An
//! empty index list is legal and means intercept-only controls.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::WALD_Z;

/// Which estimator produced a [`TauEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EstimatorMethod {
    Supervised,
    Soft,
    Hard,
    Confident,
}

/// Point estimate of the partial association `tau` with its Wald interval.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TauEstimate {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_used: usize,
    pub method: EstimatorMethod,
}

impl TauEstimate {
    pub(crate) fn new(tau_hat: f64, se: f64, n_used: usize, method: EstimatorMethod) -> Self {
        TauEstimate {
            tau_hat,
            se,
            ci_lo: tau_hat - WALD_Z * se,
            ci_hi: tau_hat + WALD_Z * se,
            n_used,
            method,
        }
    }

    /// Does the 95% Wald interval cover `value`?
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }
}

/// Paired residuals of the soft score and of a hard pseudo-label at one
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub a_soft: Vec<f64>,
    pub a_hard: Vec<f64>,
    pub threshold: f64,
}

/// Labelled sample: classifier features `W`, control-column indices, observed
/// group indicator `G` and outcome `Y`.
#[derive(Debug, Clone)]
pub struct LabelledSet {
    w: Matrix,
    x_cols: Vec<usize>,
    g: Vec<u8>,
    y: Vec<f64>,
}

/// Unlabelled sample: classifier features `W`, control-column indices, the
/// calibrated score `p` and outcome `Y`.
#[derive(Debug, Clone)]
pub struct UnlabelledSet {
    w: Matrix,
    x_cols: Vec<usize>,
    p: Vec<f64>,
    y: Vec<f64>,
}

fn check_x_cols(x_cols: &[usize], d_w: usize) -> Result<()> {
    for (i, &c) in x_cols.iter().enumerate() {
        if c >= d_w {
            return Err(Error::InvalidData(format!(
                "control column index {c} out of range (d_W = {d_w})"
            )));
        }
        if x_cols[..i].contains(&c) {
            return Err(Error::InvalidData(format!(
                "duplicate control column index {c}"
            )));
        }
    }
    Ok(())
}

impl LabelledSet {
    pub fn new(w: Matrix, x_cols: Vec<usize>, g: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let n = w.rows();
        if n < 1 {
            return Err(Error::TooFewRows { needed: 1, got: n });
        }
        if g.len() != n || y.len() != n {
            return Err(Error::InvalidData(
                "w, g, y must have the same number of rows".to_string(),
            ));
        }
        check_x_cols(&x_cols, w.cols())?;
        if let Some(bad) = g.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidData(format!(
                "group indicator must be 0 or 1, found {bad}"
            )));
        }
        Ok(LabelledSet { w, x_cols, g, y })
    }

    pub fn len(&self) -> usize {
        self.w.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn x_cols(&self) -> &[usize] {
        &self.x_cols
    }

    pub fn g(&self) -> &[u8] {
        &self.g
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn controls(&self) -> Matrix {
        self.w.select_columns(&self.x_cols)
    }
}

impl UnlabelledSet {
    pub fn new(w: Matrix, x_cols: Vec<usize>, p: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = w.rows();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, got: n });
        }
        if p.len() != n || y.len() != n {
            return Err(Error::InvalidData(
                "w, p, y must have the same number of rows".to_string(),
            ));
        }
        check_x_cols(&x_cols, w.cols())?;
        if let Some((i, &bad)) = p
            .iter()
            .enumerate()
            .find(|(_, &v)| !(0.0..=1.0).contains(&v) || !v.is_finite())
        {
            return Err(Error::InvalidData(format!(
                "score p out of [0,1] at row {i}: {bad}"
            )));
        }
        Ok(UnlabelledSet { w, x_cols, p, y })
    }

    pub fn len(&self) -> usize {
        self.w.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn x_cols(&self) -> &[usize] {
        &self.x_cols
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn controls(&self) -> Matrix {
        self.w.select_columns(&self.x_cols)
    }

    /// Restrict to the given row indices (used by the confident-subset
    /// estimator).
    pub fn select_rows(&self, rows: &[usize]) -> Result<UnlabelledSet> {
        UnlabelledSet::new(
            self.w.select_rows(rows),
            self.x_cols.clone(),
            rows.iter().map(|&i| self.p[i]).collect(),
            rows.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

/// Access to the control submatrix shared by both sample types.
pub trait HasControls {
    fn feature_matrix(&self) -> &Matrix;
    fn control_columns(&self) -> &[usize];
}

impl HasControls for LabelledSet {
    fn feature_matrix(&self) -> &Matrix {
        &self.w
    }
    fn control_columns(&self) -> &[usize] {
        &self.x_cols
    }
}

impl HasControls for UnlabelledSet {
    fn feature_matrix(&self) -> &Matrix {
        &self.w
    }
    fn control_columns(&self) -> &[usize] {
        &self.x_cols
    }
}

/// The `X` submatrix of `W`, column order following the stored indices.
pub fn extract_controls<T: HasControls>(set: &T) -> Matrix {
    set.feature_matrix().select_columns(set.control_columns())
}

/// Balanced random partition of `0..n` into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    n: usize,
    k: usize,
    assignment: Vec<u32>,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Fold index of each row, length `n`.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    #[inline]
    pub fn fold_of(&self, row: usize) -> u32 {
        self.assignment[row]
    }

    /// Restriction to a row subset: rows keep their fold labels. Folds that
    /// lose all members simply come out empty.
    pub(crate) fn restrict(&self, rows: &[usize]) -> FoldAssignment {
        FoldAssignment {
            n: rows.len(),
            k: self.k,
            assignment: rows.iter().map(|&i| self.assignment[i]).collect(),
        }
    }

}

/// Uniformly random balanced partition, fully determined by `seed`.
///
/// Fold sizes differ by at most one and every fold is non-empty.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidFoldCount { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = alloc::vec![0u32; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = (pos % k) as u32;
    }
    Ok(FoldAssignment { n, k, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn folds_are_balanced_partitions() {
        let f = make_folds(4, 2, 0).unwrap();
        let mut sizes = [0usize; 2];
        for &a in f.assignment() {
            sizes[a as usize] += 1;
        }
        assert_eq!(sizes, [2, 2]);

        let f = make_folds(5, 2, 7).unwrap();
        let mut sizes = [0usize; 2];
        for &a in f.assignment() {
            sizes[a as usize] += 1;
        }
        sizes.sort_unstable();
        assert_eq!(sizes, [2, 3]);
    }

    #[test]
    fn fold_count_is_validated() {
        assert_eq!(
            make_folds(5, 6, 0),
            Err(Error::InvalidFoldCount { n: 5, k: 6 })
        );
        assert_eq!(
            make_folds(5, 1, 0),
            Err(Error::InvalidFoldCount { n: 5, k: 1 })
        );
    }

    #[test]
    fn folds_are_deterministic_in_seed() {
        let a = make_folds(100, 5, 42).unwrap();
        let b = make_folds(100, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = make_folds(100, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn extract_controls_selects_columns() {
        let w = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let u = UnlabelledSet::new(w.clone(), vec![0, 2], vec![0.5, 0.5], vec![0.0, 1.0]).unwrap();
        let x = extract_controls(&u);
        assert_eq!(x.row(0), &[1.0, 3.0]);
        assert_eq!(x.row(1), &[4.0, 6.0]);

        // all columns: identity
        let u2 = UnlabelledSet::new(w.clone(), vec![0, 1, 2], vec![0.5, 0.5], vec![0.0, 1.0]).unwrap();
        assert_eq!(extract_controls(&u2), w);

        // empty: n x 0
        let u3 = UnlabelledSet::new(w, vec![], vec![0.5, 0.5], vec![0.0, 1.0]).unwrap();
        let x3 = extract_controls(&u3);
        assert_eq!((x3.rows(), x3.cols()), (2, 0));
    }

    #[test]
    fn construction_invariants() {
        let w = Matrix::from_rows(&[&[1.0], &[2.0]]);
        assert!(UnlabelledSet::new(w.clone(), vec![0], vec![0.5, 1.5], vec![0.0, 0.0]).is_err());
        assert!(UnlabelledSet::new(w.clone(), vec![1], vec![0.5, 0.5], vec![0.0, 0.0]).is_err());
        assert!(UnlabelledSet::new(w.clone(), vec![0, 0], vec![0.5, 0.5], vec![0.0, 0.0]).is_err());
        assert!(LabelledSet::new(w.clone(), vec![0], vec![0, 2], vec![0.0, 0.0]).is_err());
        assert!(LabelledSet::new(w, vec![0], vec![0, 1], vec![0.0, 0.0]).is_ok());
    }

    #[test]
    fn tau_estimate_interval() {
        let t = TauEstimate::new(1.0, 0.5, 10, EstimatorMethod::Soft);
        assert!((t.ci_lo - (1.0 - 1.96 * 0.5)).abs() < 1e-15);
        assert!((t.ci_hi - (1.0 + 1.96 * 0.5)).abs() < 1e-15);
        assert!(t.covers(1.5));
        assert!(!t.covers(2.5));
    }
}
