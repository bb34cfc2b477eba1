//! Plain-text rendering of run and matrix reports.

use std::path::Path;

use serde_json::Value;

use crate::baselines::BaselineReport;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

use super::matrix::MatrixReport;

fn fmt_score(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Aligned table with one line per cell, in report order.
pub fn render_matrix(report: &MatrixReport) -> String {
    let header = ["cell", "kind", "features", "precision", "recall", "specificity", "f1", "error"];
    let rows: Vec<[String; 8]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.cell.clone(),
                r.kind.clone(),
                r.features.clone(),
                fmt_score(r.precision),
                fmt_score(r.recall),
                fmt_score(r.specificity),
                fmt_score(r.f1),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = cells
            .iter()
            .zip(width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in &rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

/// Renders any report file this crate writes: a metrics report, a
/// baseline report or a matrix report.
pub fn render_file(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if v.get("rows").is_some() {
        let m: MatrixReport = serde_json::from_value(v)?;
        return Ok(render_matrix(&m));
    }
    if v.get("grid").is_some() {
        let b: BaselineReport = serde_json::from_value(v)?;
        return Ok(format!(
            "baseline {}  best {}  validation F1 {:.4}\n{}",
            b.model.name(),
            serde_json::to_string(&b.best)?,
            b.valid_f1,
            b.test
        ));
    }
    if v.get("f1").is_some() {
        let r: MetricsReport = serde_json::from_value(v)?;
        return Ok(r.to_string());
    }
    Err(Error::data(format!("{}: not a recognised report", path.display())))
}
