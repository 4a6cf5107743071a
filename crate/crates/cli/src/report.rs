//! Report and table emission. JSON uses a stable field order (struct
//! declaration order) and 17-significant-digit number formatting, which
//! round-trips `f64` losslessly; non-finite values map to `null` and are
//! restored as infinities on read.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pseudocal_core::calibration::LabelLeakResult;
use pseudocal_core::estimators::KappaEstimate;
use pseudocal_core::simulation::Table;
use pseudocal_core::{Decision, DiagnosticReport, TauEstimate};

use crate::{AppError, AppResult};

/// Serialized form of a diagnostic report, with run metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportEnvelope {
    pub v_star_hat: f64,
    pub kappas: Vec<KappaEstimate>,
    /// `None` encodes a non-finite value (collapse).
    pub se_soft_implied: Option<f64>,
    pub se_supervised: Option<f64>,
    pub decision: Decision,
    pub label_leak: Option<LabelLeakResult>,
    pub notes: Vec<String>,
    pub seed: u64,
    pub version: String,
}

impl ReportEnvelope {
    pub fn new(report: &DiagnosticReport, seed: u64) -> Self {
        ReportEnvelope {
            v_star_hat: report.v_star_hat,
            kappas: report.kappas.clone(),
            se_soft_implied: finite_or_none(report.se_soft_implied),
            se_supervised: report.se_supervised.and_then(finite_or_none),
            decision: report.decision,
            label_leak: report.label_leak.clone(),
            notes: report.notes.clone(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Reconstruct the in-memory report; `None` standard errors come back as
    /// positive infinity.
    pub fn into_report(self) -> DiagnosticReport {
        DiagnosticReport {
            v_star_hat: self.v_star_hat,
            kappas: self.kappas,
            se_soft_implied: self.se_soft_implied.unwrap_or(f64::INFINITY),
            se_supervised: self.se_supervised,
            label_leak: self.label_leak,
            decision: self.decision,
            notes: self.notes,
        }
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Point-estimate output of the `estimate` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateEnvelope {
    pub estimate: TauEstimate,
    pub threshold: Option<f64>,
    pub v_star_hat: Option<f64>,
    pub subset_size: Option<usize>,
    pub kappa_fm: Option<f64>,
    pub dropped_rows: usize,
    pub seed: u64,
    pub version: String,
}

/// serde_json formatter printing every finite float with 17 significant
/// digits (`{:.16e}`), enough to reconstruct the exact bit pattern.
struct SigDigits17<'a> {
    indent: serde_json::ser::PrettyFormatter<'a>,
}

impl serde_json::ser::Formatter for SigDigits17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    // delegate structure to the pretty formatter
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::begin_array(&mut self.indent, w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::end_array(&mut self.indent, w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        serde_json::ser::Formatter::begin_array_value(&mut self.indent, w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::end_array_value(&mut self.indent, w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::begin_object(&mut self.indent, w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::end_object(&mut self.indent, w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        serde_json::ser::Formatter::begin_object_key(&mut self.indent, w, first)
    }
    fn end_object_key<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::end_object_key(&mut self.indent, w)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::begin_object_value(&mut self.indent, w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        serde_json::ser::Formatter::end_object_value(&mut self.indent, w)
    }
}

/// Serialize any report payload to a JSON string with the 17-digit float
/// convention.
pub fn to_json_string<T: Serialize>(value: &T) -> AppResult<String> {
    let mut out = Vec::new();
    let formatter = SigDigits17 {
        indent: serde_json::ser::PrettyFormatter::new(),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut out, formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| AppError::Io(format!("serializing report: {e}")))?;
    out.push(b'\n');
    String::from_utf8(out).map_err(|e| AppError::Io(format!("serializing report: {e}")))
}

/// Write a JSON payload to a file (or stdout when `path` is `-`).
pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> AppResult<()> {
    let text = to_json_string(value)?;
    if path.as_os_str() == "-" {
        print!("{text}");
        return Ok(());
    }
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Write an experiment table as CSV with its header row.
pub fn emit_table_csv(table: &Table, path: &Path) -> AppResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| AppError::io(path, e))?;
    writer
        .write_record(&table.columns)
        .map_err(|e| AppError::io(path, e))?;
    for row in &table.rows {
        writer.write_record(row).map_err(|e| AppError::io(path, e))?;
    }
    writer.flush().map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digit_floats_roundtrip_exactly() {
        #[derive(Serialize, Deserialize)]
        struct V {
            x: f64,
        }
        for x in [0.1, 1.0 / 3.0, 2.0_f64.powi(-40) * 7.0, 1e300, -0.0] {
            let s = to_json_string(&V { x }).unwrap();
            let back: V = serde_json::from_str(&s).unwrap();
            assert_eq!(back.x.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn nonfinite_becomes_null_and_back() {
        let report = DiagnosticReport {
            v_star_hat: 0.0,
            kappas: vec![],
            se_soft_implied: f64::INFINITY,
            se_supervised: None,
            label_leak: None,
            decision: Decision::Collapse,
            notes: vec!["collapsed".into()],
        };
        let env = ReportEnvelope::new(&report, 7);
        let s = to_json_string(&env).unwrap();
        assert!(s.contains("\"se_soft_implied\": null"), "{s}");
        let back: ReportEnvelope = serde_json::from_str(&s).unwrap();
        let rec = back.into_report();
        assert!(rec.se_soft_implied.is_infinite());
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let table = Table {
            columns: vec!["a".into()],
            rows: vec![vec!["1".into()]],
        };
        let err = emit_table_csv(&table, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"), "{err}");
    }
}
