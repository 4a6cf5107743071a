//! CSV ingestion against a user-supplied JSON schema.
//!
//! Conventions (following the Adult dataset): fields are trimmed, `?` and
//! the empty string are missing values, and any row with a missing value in
//! a used column is dropped (the count is reported). Categorical columns are
//! one-hot encoded with the lexicographically first category dropped, so the
//! encoding is stable across runs and independent of row order.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pseudocal_core::linalg::Matrix;
use pseudocal_core::{LabelledSet, UnlabelledSet};

use crate::{AppError, AppResult};

/// Column roles for a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSchema {
    pub w_columns: Vec<String>,
    pub x_columns: Vec<String>,
    #[serde(default)]
    pub p_column: Option<String>,
    pub y_column: String,
    #[serde(default)]
    pub g_column: Option<String>,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
}

impl TableSchema {
    pub fn from_file(path: &Path) -> AppResult<TableSchema> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let schema: TableSchema = serde_json::from_str(&text)
            .map_err(|e| AppError::Validation(format!("{}: bad schema: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> AppResult<()> {
        for x in &self.x_columns {
            if !self.w_columns.contains(x) {
                return Err(AppError::Validation(format!(
                    "x column {x:?} is not a w column (X must be a subset of W)"
                )));
            }
        }
        for c in &self.categorical_columns {
            if !self.w_columns.contains(c) {
                return Err(AppError::Validation(format!(
                    "categorical column {c:?} is not a w column"
                )));
            }
        }
        if self.p_column.is_none() && self.g_column.is_none() {
            return Err(AppError::Validation(
                "schema needs p_column (unlabelled mode) or g_column (labelled mode)".into(),
            ));
        }
        Ok(())
    }

    fn used_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self.w_columns.iter().map(|s| s.as_str()).collect();
        cols.push(self.y_column.as_str());
        if let Some(p) = &self.p_column {
            cols.push(p.as_str());
        }
        if let Some(g) = &self.g_column {
            cols.push(g.as_str());
        }
        cols
    }
}

/// Result of loading a CSV against a schema. Labelled mode carries the
/// classifier scores too when the file has a `p` column.
#[derive(Debug)]
pub enum LoadedSet {
    Unlabelled(UnlabelledSet),
    Labelled {
        set: LabelledSet,
        scores: Option<Vec<f64>>,
    },
}

#[derive(Debug)]
pub struct LoadedTable {
    pub set: LoadedSet,
    pub dropped_rows: usize,
    /// expanded feature names aligned with the W matrix columns
    pub feature_names: Vec<String>,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "?"
}

/// Load a CSV with a header row. Rows missing any used column are dropped.
pub fn load_table(path: &Path, schema: &TableSchema) -> AppResult<LoadedTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AppError::io(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| AppError::io(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let col_index = |name: &str| -> AppResult<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AppError::Validation(format!("missing column {name:?} in {path:?}")))
    };
    for used in schema.used_columns() {
        col_index(used)?;
    }

    // read and filter rows
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let mut dropped_rows = 0usize;
    let used: Vec<usize> = schema
        .used_columns()
        .iter()
        .map(|c| col_index(c).unwrap())
        .collect();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| AppError::io(path, e))?;
        if record.len() != headers.len() {
            return Err(AppError::Validation(format!(
                "row {}: expected {} fields, found {}",
                i + 2,
                headers.len(),
                record.len()
            )));
        }
        if used.iter().any(|&j| is_missing(&record[j])) {
            dropped_rows += 1;
            continue;
        }
        rows.push(record);
    }
    if rows.is_empty() {
        return Err(AppError::Validation(format!(
            "{}: no rows left after dropping missing values",
            path.display()
        )));
    }

    build_table(path, schema, &headers, &rows, dropped_rows)
}

fn parse_field(path: &Path, field: &str, column: &str, row: usize) -> AppResult<f64> {
    field.parse::<f64>().map_err(|_| {
        AppError::Validation(format!(
            "{}: row {row}, column {column:?}: cannot parse {field:?} as a number",
            path.display()
        ))
    })
}

fn build_table(
    path: &Path,
    schema: &TableSchema,
    headers: &[String],
    rows: &[csv::StringRecord],
    dropped_rows: usize,
) -> AppResult<LoadedTable> {
    let n = rows.len();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();

    // category levels per categorical column, lexicographic
    let mut levels: Vec<Vec<String>> = Vec::new();
    for c in &schema.categorical_columns {
        let j = col(c);
        let set: BTreeSet<String> = rows.iter().map(|r| r[j].to_string()).collect();
        levels.push(set.into_iter().collect());
    }

    // expanded feature layout
    let mut feature_names: Vec<String> = Vec::new();
    let mut x_cols: Vec<usize> = Vec::new();
    struct Source {
        column: usize,
        kind: SourceKind,
    }
    enum SourceKind {
        Numeric,
        Categorical { levels_index: usize },
    }
    let mut sources = Vec::new();
    for w in &schema.w_columns {
        let j = col(w);
        let in_x = schema.x_columns.contains(w);
        if let Some(ci) = schema.categorical_columns.iter().position(|c| c == w) {
            // drop-first encoding
            for level in levels[ci].iter().skip(1) {
                if in_x {
                    x_cols.push(feature_names.len());
                }
                feature_names.push(format!("{w}={level}"));
            }
            sources.push(Source {
                column: j,
                kind: SourceKind::Categorical { levels_index: ci },
            });
        } else {
            if in_x {
                x_cols.push(feature_names.len());
            }
            feature_names.push(w.clone());
            sources.push(Source {
                column: j,
                kind: SourceKind::Numeric,
            });
        }
    }

    let d = feature_names.len();
    let mut w_matrix = Matrix::zeros(n, d);
    for (i, record) in rows.iter().enumerate() {
        let mut out = 0usize;
        for s in &sources {
            let field = &record[s.column];
            match &s.kind {
                SourceKind::Numeric => {
                    let v = parse_field(path, field, &headers[s.column], i + 2)?;
                    w_matrix.set(i, out, v);
                    out += 1;
                }
                SourceKind::Categorical { levels_index } => {
                    let lv = &levels[*levels_index];
                    for level in lv.iter().skip(1) {
                        w_matrix.set(i, out, f64::from(field == level.as_str()));
                        out += 1;
                    }
                }
            }
        }
    }

    let y_col = col(&schema.y_column);
    let mut y = Vec::with_capacity(n);
    for (i, record) in rows.iter().enumerate() {
        y.push(parse_field(path, &record[y_col], &schema.y_column, i + 2)?);
    }

    let scores = match &schema.p_column {
        Some(pc) => {
            let j = col(pc);
            let mut p = Vec::with_capacity(n);
            for (i, record) in rows.iter().enumerate() {
                let v = parse_field(path, &record[j], pc, i + 2)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(AppError::Validation(format!(
                        "{}: row {}, column {pc:?}: score {v} outside [0,1]",
                        path.display(),
                        i + 2
                    )));
                }
                p.push(v);
            }
            Some(p)
        }
        None => None,
    };

    let set = match &schema.g_column {
        Some(gc) => {
            let j = col(gc);
            let mut g = Vec::with_capacity(n);
            for (i, record) in rows.iter().enumerate() {
                let field = &record[j];
                let v = match field.as_ref() {
                    "0" => 0u8,
                    "1" => 1u8,
                    other => {
                        return Err(AppError::Validation(format!(
                            "{}: row {}, column {gc:?}: group must be 0 or 1, found {other:?}",
                            path.display(),
                            i + 2
                        )))
                    }
                };
                g.push(v);
            }
            LoadedSet::Labelled {
                set: LabelledSet::new(w_matrix, x_cols, g, y)?,
                scores,
            }
        }
        None => {
            let p = scores.expect("validated: p_column present in unlabelled mode");
            LoadedSet::Unlabelled(UnlabelledSet::new(w_matrix, x_cols, p, y)?)
        }
    };

    Ok(LoadedTable {
        set,
        dropped_rows,
        feature_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn base_schema() -> TableSchema {
        TableSchema {
            w_columns: vec!["a".into(), "b".into()],
            x_columns: vec!["a".into()],
            p_column: Some("p".into()),
            y_column: "y".into(),
            g_column: None,
            categorical_columns: vec![],
        }
    }

    #[test]
    fn drops_rows_with_missing_values() {
        let f = write_csv("a,b,p,y\n1,2,0.5,3\n4,?,0.6,5\n6,7,0.7,\n8,9,0.8,10\n");
        let t = load_table(f.path(), &base_schema()).unwrap();
        assert_eq!(t.dropped_rows, 2);
        match t.set {
            LoadedSet::Unlabelled(u) => assert_eq!(u.len(), 2),
            _ => panic!("expected unlabelled"),
        }
    }

    #[test]
    fn one_hot_drops_first_lexicographic_level() {
        let f = write_csv("a,b,p,y\nred,2,0.5,3\nblue,1,0.6,4\ngreen,0,0.7,5\nred,2,0.8,6\n");
        let schema = TableSchema {
            w_columns: vec!["a".into(), "b".into()],
            x_columns: vec!["a".into()],
            p_column: Some("p".into()),
            y_column: "y".into(),
            g_column: None,
            categorical_columns: vec!["a".into()],
        };
        let t = load_table(f.path(), &schema).unwrap();
        // k=3 levels -> 2 indicators; "blue" dropped
        assert_eq!(
            t.feature_names,
            vec!["a=green".to_string(), "a=red".to_string(), "b".to_string()]
        );
        match t.set {
            LoadedSet::Unlabelled(u) => {
                assert_eq!(u.x_cols(), &[0, 1]);
                assert_eq!(u.w().row(0), &[0.0, 1.0, 2.0]);
                assert_eq!(u.w().row(2), &[1.0, 0.0, 0.0]);
            }
            _ => panic!("expected unlabelled"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let f = write_csv("a,p,y\n1,0.5,3\n");
        let err = load_table(f.path(), &base_schema()).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
    }

    #[test]
    fn score_out_of_range_reports_row() {
        let f = write_csv("a,b,p,y\n1,2,0.5,3\n4,5,1.5,6\n");
        let err = load_table(f.path(), &base_schema()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn labelled_mode_carries_scores_when_present() {
        let f = write_csv("a,b,p,y,g\n1,2,0.5,3,1\n4,5,0.6,6,0\n7,8,0.7,9,1\n");
        let schema = TableSchema {
            g_column: Some("g".into()),
            ..base_schema()
        };
        let t = load_table(f.path(), &schema).unwrap();
        match t.set {
            LoadedSet::Labelled { set, scores } => {
                assert_eq!(set.len(), 3);
                assert_eq!(scores.unwrap(), vec![0.5, 0.6, 0.7]);
            }
            _ => panic!("expected labelled"),
        }
    }

    #[test]
    fn ingestion_is_deterministic_and_row_order_independent_encoding() {
        let f1 = write_csv("a,b,p,y\nred,2,0.5,3\nblue,1,0.6,4\n");
        let f2 = write_csv("a,b,p,y\nblue,1,0.6,4\nred,2,0.5,3\n");
        let schema = TableSchema {
            categorical_columns: vec!["a".into()],
            ..base_schema()
        };
        let t1 = load_table(f1.path(), &schema).unwrap();
        let t2 = load_table(f2.path(), &schema).unwrap();
        assert_eq!(t1.feature_names, t2.feature_names);
    }
}
