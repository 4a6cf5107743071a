//! UCI Adult Income pipeline: estimate the partial association of the
//! high-income marker with education-years, controlling for a parsimonious
//! demographic profile, from a classifier trained on the full feature set.
//!
//! The classifier feature set `W` is age, hours-per-week, sex, capital
//! gain/loss, occupation, marital status, work class, relationship, race,
//! and native country; the downstream controls `X` are age, hours-per-week,
//! and sex; the outcome `Y` is `education-num` and the latent group is
//! `income > 50K`. The dataset itself is never bundled; callers supply the
//! CSV path. Both the headered CSV export and the raw headerless
//! `adult.data` layout are accepted; `?` and empty fields are missing and
//! drop the row.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pseudocal_core::calibration::fit_isotonic;
use pseudocal_core::data::{make_folds, LabelledSet, UnlabelledSet};
use pseudocal_core::estimators::{hard_estimator, soft_estimator, supervised_baseline};
use pseudocal_core::learners::{expand_poly2, fit_logistic, LearnerConfig, PROB_CLIP};
use pseudocal_core::linalg::Matrix;
use pseudocal_core::{run_diagnostic, Decision, DiagnosticConfig, LabelledContext};

use crate::{AppError, AppResult};

/// Canonical Adult column order (raw `adult.data` has no header).
const ADULT_COLUMNS: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

const CONTINUOUS_W: [&str; 4] = ["age", "capital-gain", "capital-loss", "hours-per-week"];
const CATEGORICAL_W: [&str; 7] = [
    "workclass",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "native-country",
];

/// One run of the pipeline at a single labelled-set size.
#[derive(Debug, Clone)]
pub struct AdultConfig {
    pub csv_path: PathBuf,
    pub n_l: usize,
    pub splits: usize,
    pub seed: u64,
    pub threshold: f64,
}

/// Aggregated row of the Adult results table.
#[derive(Debug, Clone)]
pub struct AdultRow {
    pub n_l: usize,
    pub v_star: f64,
    pub mse_supervised: f64,
    pub bias_soft: f64,
    pub mse_soft: f64,
    pub bias_hard: f64,
    pub mse_hard: f64,
    /// modal diagnostic decision across splits
    pub decision: Decision,
    pub splits_used: usize,
}

/// The parsed dataset with classifier design and downstream views prebuilt.
pub struct AdultData {
    /// classifier design: poly2 of the continuous columns, one-hot linear
    classifier_design: Matrix,
    /// downstream controls: age, hours-per-week, sex indicator
    controls: Matrix,
    y: Vec<f64>,
    g: Vec<u8>,
    pub rows: usize,
    pub dropped_rows: usize,
    /// full-sample OLS coefficient on the group indicator
    pub tau_full: f64,
    pub tau_full_se: f64,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "?"
}

/// Read and prepare the Adult CSV.
pub fn load_adult(path: &Path) -> AppResult<AdultData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| AppError::io(path, e))?;
    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| AppError::io(path, e))?;
        if rec.len() <= 1 {
            continue; // blank line
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(AppError::Validation(format!(
            "{}: empty file",
            path.display()
        )));
    }

    // header detection: a first row containing "age" by name
    let has_header = records[0].iter().any(|f| f.eq_ignore_ascii_case("age"));
    let positions: Vec<usize> = if has_header {
        let header = &records[0];
        ADULT_COLUMNS
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(name))
                    .ok_or_else(|| {
                        AppError::Validation(format!("missing Adult column {name:?}"))
                    })
            })
            .collect::<AppResult<_>>()?
    } else {
        if records[0].len() != ADULT_COLUMNS.len() {
            return Err(AppError::Validation(format!(
                "{}: expected {} columns in headerless Adult data, found {}",
                path.display(),
                ADULT_COLUMNS.len(),
                records[0].len()
            )));
        }
        (0..ADULT_COLUMNS.len()).collect()
    };
    let body = if has_header { &records[1..] } else { &records[..] };

    // drop rows with a missing value in any used column (fnlwgt and the
    // redundant education string are not used, but the published row count
    // drops on any missing field, which only ever occurs in used columns)
    let mut rows: Vec<&csv::StringRecord> = Vec::new();
    let mut dropped_rows = 0usize;
    for rec in body {
        if rec.len() < ADULT_COLUMNS.len() || rec.iter().any(is_missing) {
            dropped_rows += 1;
            continue;
        }
        rows.push(rec);
    }
    let n = rows.len();
    if n < 100 {
        return Err(AppError::Validation(format!(
            "{}: only {n} usable rows",
            path.display()
        )));
    }

    let col = |name: &str| positions[ADULT_COLUMNS.iter().position(|c| c == &name).unwrap()];
    let parse_num = |field: &str, name: &str, row: usize| -> AppResult<f64> {
        field.parse::<f64>().map_err(|_| {
            AppError::Validation(format!(
                "row {row}: column {name:?}: cannot parse {field:?}"
            ))
        })
    };

    // categorical levels, lexicographic
    let mut levels: Vec<Vec<String>> = Vec::new();
    for name in CATEGORICAL_W {
        let j = col(name);
        let set: BTreeSet<String> = rows.iter().map(|r| r[j].to_string()).collect();
        levels.push(set.into_iter().collect());
    }

    // classifier design: poly2(continuous) then one-hot blocks
    let mut cont = Matrix::zeros(n, CONTINUOUS_W.len());
    for (i, rec) in rows.iter().enumerate() {
        for (k, name) in CONTINUOUS_W.iter().enumerate() {
            cont.set(i, k, parse_num(&rec[col(name)], name, i + 1)?);
        }
    }
    let cont_poly = expand_poly2(&cont);
    let onehot_cols: usize = levels.iter().map(|l| l.len().saturating_sub(1)).sum();
    let mut design = Matrix::zeros(n, cont_poly.cols() + onehot_cols);
    for i in 0..n {
        for j in 0..cont_poly.cols() {
            design.set(i, j, cont_poly.get(i, j));
        }
        let mut out = cont_poly.cols();
        for (li, name) in CATEGORICAL_W.iter().enumerate() {
            let field = &rows[i][col(name)];
            for level in levels[li].iter().skip(1) {
                design.set(i, out, f64::from(field == level.as_str()));
                out += 1;
            }
        }
    }

    // downstream controls: age, hours-per-week, sex indicator (drop-first
    // over the lexicographic sex levels)
    let sex_levels = &levels[CATEGORICAL_W.iter().position(|c| *c == "sex").unwrap()];
    if sex_levels.len() != 2 {
        return Err(AppError::Validation(format!(
            "expected two sex levels, found {:?}",
            sex_levels
        )));
    }
    let mut controls = Matrix::zeros(n, 3);
    for (i, rec) in rows.iter().enumerate() {
        controls.set(i, 0, parse_num(&rec[col("age")], "age", i + 1)?);
        controls.set(i, 1, parse_num(&rec[col("hours-per-week")], "hours-per-week", i + 1)?);
        controls.set(
            i,
            2,
            f64::from(rec[col("sex")] == *sex_levels[1]),
        );
    }

    let mut y = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for (i, rec) in rows.iter().enumerate() {
        y.push(parse_num(&rec[col("education-num")], "education-num", i + 1)?);
        let income = rec[col("income")].trim_end_matches('.');
        g.push(u8::from(income == ">50K"));
    }

    // full-sample target
    let full = LabelledSet::new(controls.clone(), vec![0, 1, 2], g.clone(), y.clone())?;
    let tau = supervised_baseline(&full)?;

    Ok(AdultData {
        classifier_design: design,
        controls,
        y,
        g,
        rows: n,
        dropped_rows,
        tau_full: tau.tau_hat,
        tau_full_se: tau.se,
    })
}

fn modal_decision(decisions: &[Decision]) -> Decision {
    let variants = [
        Decision::PreferSupervised,
        Decision::PreferSoft,
        Decision::EitherAcceptable,
        Decision::Collapse,
    ];
    *variants
        .iter()
        .max_by_key(|v| decisions.iter().filter(|d| d == v).count())
        .unwrap()
}

/// Run the pipeline at one labelled-set size over independent random splits.
pub fn adult_pipeline(data: &AdultData, cfg: &AdultConfig) -> AppResult<AdultRow> {
    let n = data.rows;
    if cfg.n_l + 100 > n {
        return Err(AppError::Validation(format!(
            "n_l = {} leaves too few unlabelled rows (n = {n})",
            cfg.n_l
        )));
    }
    let mut v_stars = Vec::new();
    let mut soft_taus = Vec::new();
    let mut hard_taus = Vec::new();
    let mut sup_taus = Vec::new();
    let mut decisions = Vec::new();

    for split in 0..cfg.splits {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (split as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let l_rows = &order[..cfg.n_l];
        let u_rows = &order[cfg.n_l..];

        // classifier: logistic on half of L, isotonic recalibration on the
        // other half, then score the unlabelled rows and L itself
        let half = cfg.n_l / 2;
        let train_rows: Vec<usize> = l_rows[..half].to_vec();
        let cal_rows: Vec<usize> = l_rows[half..].to_vec();
        let design_train = data.classifier_design.select_rows(&train_rows);
        let g_train: Vec<u8> = train_rows.iter().map(|&i| data.g[i]).collect();
        let model = fit_logistic(&design_train, &g_train, 100, 1e-8)?;
        let design_cal = data.classifier_design.select_rows(&cal_rows);
        let raw_cal = model.predict(&design_cal);
        let g_cal: Vec<u8> = cal_rows.iter().map(|&i| data.g[i]).collect();
        let iso = fit_isotonic(&raw_cal, &g_cal)?;
        let score = |rows: &[usize]| -> Vec<f64> {
            let d = data.classifier_design.select_rows(rows);
            model
                .predict(&d)
                .into_iter()
                .map(|s| iso.apply(s).clamp(PROB_CLIP.0, PROB_CLIP.1))
                .collect()
        };
        let p_u = score(u_rows);
        let p_l = score(l_rows);

        let u_set = UnlabelledSet::new(
            data.controls.select_rows(u_rows),
            vec![0, 1, 2],
            p_u,
            u_rows.iter().map(|&i| data.y[i]).collect(),
        )?;
        let l_set = LabelledSet::new(
            data.controls.select_rows(l_rows),
            vec![0, 1, 2],
            l_rows.iter().map(|&i| data.g[i]).collect(),
            l_rows.iter().map(|&i| data.y[i]).collect(),
        )?;

        let folds = make_folds(u_set.len(), 5, rng.random())?;
        let soft = soft_estimator(&u_set, &folds, &LearnerConfig::nuisance_default())?;
        let hard = hard_estimator(&u_set, cfg.threshold, &folds)?;
        let sup = supervised_baseline(&l_set)?;
        let diag_cfg = DiagnosticConfig {
            seed: rng.random(),
            ..DiagnosticConfig::default()
        };
        let report = run_diagnostic(
            &u_set,
            Some(LabelledContext::with_scores(&l_set, &p_l)),
            &diag_cfg,
        )?;

        v_stars.push(soft.v_star_hat);
        soft_taus.push(soft.tau.tau_hat);
        hard_taus.push(hard.tau_hat);
        sup_taus.push(sup.tau_hat);
        decisions.push(report.decision);
    }

    let splits_used = v_stars.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mse = |v: &[f64]| {
        v.iter()
            .map(|t| (t - data.tau_full) * (t - data.tau_full))
            .sum::<f64>()
            / v.len() as f64
    };
    Ok(AdultRow {
        n_l: cfg.n_l,
        v_star: mean(&v_stars),
        mse_supervised: mse(&sup_taus),
        bias_soft: mean(&soft_taus) - data.tau_full,
        mse_soft: mse(&soft_taus),
        bias_hard: mean(&hard_taus) - data.tau_full,
        mse_hard: mse(&hard_taus),
        decision: modal_decision(&decisions),
        splits_used,
    })
}

/// Table-6 layout: one row per labelled-set size.
pub fn adult_table(
    data: &AdultData,
    base: &AdultConfig,
    n_ls: &[usize],
) -> AppResult<Vec<AdultRow>> {
    n_ls.iter()
        .map(|&n_l| {
            adult_pipeline(
                data,
                &AdultConfig {
                    n_l,
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// CSV view of the Adult rows.
pub fn adult_rows_to_table(rows: &[AdultRow], tau_full: f64) -> pseudocal_core::simulation::Table {
    pseudocal_core::simulation::Table {
        columns: [
            "n_l",
            "v_star",
            "mse_supervised",
            "bias_soft",
            "mse_soft",
            "bias_hard",
            "mse_hard",
            "decision",
            "splits",
            "tau_full",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.n_l.to_string(),
                    format!("{}", r.v_star),
                    format!("{}", r.mse_supervised),
                    format!("{}", r.bias_soft),
                    format!("{}", r.mse_soft),
                    format!("{}", r.bias_hard),
                    format!("{}", r.mse_hard),
                    r.decision.name().to_string(),
                    r.splits_used.to_string(),
                    format!("{tau_full}"),
                ]
            })
            .collect(),
    }
}
