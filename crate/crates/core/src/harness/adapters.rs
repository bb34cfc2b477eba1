//! Dataset-format adapters turning raw log files into [`RawLogLine`]s.
//!
//! * `hdfs`: `yymmdd hhmmss pid level component: message`; the session key
//!   is the first `blk_…` id and labels come from an annotation CSV
//!   (`BlockId,Label` with `Normal`/`Anomaly`).
//! * `bgl`: first field `-` for normal lines (anything else is an alert
//!   tag), second field the epoch timestamp, message from the tenth field.
//! * `generic`: a user-supplied column map over whitespace- or
//!   delimiter-separated fields.
//! * `synth`: `<epoch_seconds> <session_key> <text>` as written by the
//!   synthetic generator, labelled from its `truth.jsonl`.
//!
//! Malformed lines are skipped and counted; more than 1% aborts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::NaiveDateTime;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::read_jsonl;
use crate::parser::RawLogLine;
use crate::synthgen::GroundTruth;

/// Fraction of malformed lines above which adaptation aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Hdfs,
    #[serde(alias = "bgl-like")]
    Bgl,
    Generic,
    Synth,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hdfs" => Ok(DatasetFormat::Hdfs),
            "bgl" | "bgl-like" => Ok(DatasetFormat::Bgl),
            "generic" => Ok(DatasetFormat::Generic),
            "synth" => Ok(DatasetFormat::Synth),
            other => Err(Error::config(format!(
                "unknown dataset format `{other}` (expected hdfs|bgl|generic|synth)"
            ))),
        }
    }
}

/// Column positions for the generic adapter. The message runs from
/// column `msg` to the end of the line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub ts: usize,
    pub msg: usize,
    #[serde(default)]
    pub label: Option<usize>,
    #[serde(default)]
    pub session: Option<usize>,
    /// Label-column value meaning "normal"; any other value is anomalous.
    #[serde(default = "default_normal")]
    pub normal_value: String,
    /// Field separator; whitespace when absent.
    #[serde(default)]
    pub delimiter: Option<String>,
}

fn default_normal() -> String {
    "0".into()
}

impl ColumnMap {
    fn validate(&self) -> Result<()> {
        let others = [Some(self.ts), self.label, self.session];
        if others.iter().flatten().any(|&c| c >= self.msg) {
            return Err(Error::config(
                "generic column map: ts/label/session columns must precede the msg column",
            ));
        }
        if self.delimiter.as_deref() == Some("") {
            return Err(Error::config("generic column map: delimiter must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub format: DatasetFormat,
    pub path: PathBuf,
    /// Annotation file: HDFS `anomaly_label.csv` or synthetic `truth.jsonl`.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub columns: Option<ColumnMap>,
}

impl InputSpec {
    pub fn validate(&self) -> Result<()> {
        match self.format {
            DatasetFormat::Generic => self
                .columns
                .as_ref()
                .ok_or_else(|| Error::config("generic input needs a `columns` map"))?
                .validate(),
            DatasetFormat::Hdfs | DatasetFormat::Synth if self.labels.is_none() => Err(Error::config(
                "hdfs and synth inputs need a `labels` annotation file",
            )),
            _ => Ok(()),
        }
    }

    /// Files whose content determines the adapted stream.
    pub fn files(&self) -> Vec<&Path> {
        std::iter::once(self.path.as_path()).chain(self.labels.as_deref()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedInput {
    pub lines: Vec<RawLogLine>,
    /// Non-empty lines seen.
    pub total: usize,
    pub malformed: usize,
}

/// Splits off the first `n` whitespace-separated fields and returns them
/// with the (trimmed) remainder.
fn split_fields(line: &str, n: usize) -> Option<(Vec<&str>, &str)> {
    let mut fields = Vec::with_capacity(n);
    let mut rest = line.trim_start();
    for _ in 0..n {
        if rest.is_empty() {
            return None;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        fields.push(&rest[..end]);
        rest = rest[end..].trim_start();
    }
    Some((fields, rest.trim_end()))
}

fn parse_ts(s: &str) -> Option<i64> {
    s.parse::<i64>()
        .ok()
        .or_else(|| s.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v.floor() as i64))
}

static BLOCK_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"blk_-?\d+").expect("valid regex"));

fn hdfs_line(line: &str) -> Option<(i64, String, String)> {
    let (f, msg) = split_fields(line, 5)?;
    let ts = NaiveDateTime::parse_from_str(&format!("{} {}", f[0], f[1]), "%y%m%d %H%M%S").ok()?;
    let key = BLOCK_ID.find(line)?.as_str().to_string();
    if msg.is_empty() {
        return None;
    }
    Some((ts.and_utc().timestamp(), key, msg.to_string()))
}

fn bgl_line(line: &str) -> Option<(i64, u8, String)> {
    let (f, msg) = split_fields(line, 9)?;
    let ts = parse_ts(f[1])?;
    if msg.is_empty() {
        return None;
    }
    Some((ts, u8::from(f[0] != "-"), msg.to_string()))
}

fn synth_line(line: &str) -> Option<(i64, String, String)> {
    let (f, msg) = split_fields(line, 2)?;
    if msg.is_empty() {
        return None;
    }
    Some((parse_ts(f[0])?, f[1].to_string(), msg.to_string()))
}

fn generic_line(line: &str, cols: &ColumnMap) -> Option<(i64, Option<u8>, Option<String>, String)> {
    let (fields, msg): (Vec<&str>, String) = match cols.delimiter.as_deref() {
        None => {
            let (f, m) = split_fields(line, cols.msg)?;
            (f, m.to_string())
        }
        Some(d) => {
            let parts: Vec<&str> = line.splitn(cols.msg + 1, d).collect();
            if parts.len() <= cols.msg {
                return None;
            }
            (parts[..cols.msg].iter().map(|s| s.trim()).collect(), parts[cols.msg].trim().to_string())
        }
    };
    if msg.is_empty() {
        return None;
    }
    let ts = parse_ts(fields[cols.ts])?;
    let label = cols.label.map(|c| u8::from(fields[c] != cols.normal_value));
    let session = cols.session.map(|c| fields[c].to_string());
    Some((ts, label, session, msg))
}

/// Reads the HDFS annotation CSV (`BlockId,Label`).
pub fn read_hdfs_labels(path: &Path) -> Result<HashMap<String, u8>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.to_ascii_lowercase().starts_with("blockid")) {
            continue;
        }
        let (key, label) = line
            .split_once(',')
            .ok_or_else(|| Error::parse_at(i + 1, format!("{}: expected `BlockId,Label`", path.display())))?;
        let label = match label.trim() {
            "Normal" | "normal" | "0" => 0,
            "Anomaly" | "anomaly" | "1" => 1,
            other => {
                return Err(Error::parse_at(
                    i + 1,
                    format!("{}: unknown label `{other}`", path.display()),
                ))
            }
        };
        out.insert(key.trim().to_string(), label);
    }
    Ok(out)
}

/// Reads the synthetic generator's `truth.jsonl` as a session → label map.
pub fn read_truth_labels(path: &Path) -> Result<HashMap<String, u8>> {
    Ok(read_jsonl::<GroundTruth>(path)?
        .into_iter()
        .map(|t| (t.session_key, t.label))
        .collect())
}

/// Adapts log text that is already in memory. `session_labels` is joined
/// onto lines by session key; lines of unannotated sessions stay unlabelled.
pub fn adapt_text(
    format: DatasetFormat,
    text: &str,
    columns: Option<&ColumnMap>,
    session_labels: Option<&HashMap<String, u8>>,
) -> Result<AdaptedInput> {
    let mut lines = Vec::new();
    let (mut total, mut malformed) = (0, 0);
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        total += 1;
        let line_no = i + 1;
        let parsed = match format {
            DatasetFormat::Hdfs => hdfs_line(raw).map(|(ts, k, m)| (ts, None, Some(k), m)),
            DatasetFormat::Synth => synth_line(raw).map(|(ts, k, m)| (ts, None, Some(k), m)),
            DatasetFormat::Bgl => bgl_line(raw).map(|(ts, l, m)| (ts, Some(l), None, m)),
            DatasetFormat::Generic => {
                let cols = columns.ok_or_else(|| Error::config("generic input needs a `columns` map"))?;
                generic_line(raw, cols)
            }
        };
        let Some((timestamp, mut label, session_key, content)) = parsed else {
            malformed += 1;
            log::debug!("skipping malformed line {line_no}");
            continue;
        };
        if let (Some(map), Some(key)) = (session_labels, session_key.as_ref()) {
            label = map.get(key).copied().or(label);
        }
        lines.push(RawLogLine {
            line_no,
            timestamp,
            content,
            label,
            session_key,
        });
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed line(s) of {total}");
    }
    if total > 0 && malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::data(format!(
            "{malformed} of {total} lines are malformed (more than {}%)",
            MAX_MALFORMED_FRACTION * 100.0
        )));
    }
    Ok(AdaptedInput {
        lines,
        total,
        malformed,
    })
}

/// Reads and adapts the input described by `spec`.
pub fn adapt_dataset(spec: &InputSpec) -> Result<AdaptedInput> {
    spec.validate()?;
    let text = std::fs::read_to_string(&spec.path).map_err(|e| Error::io(&spec.path, e))?;
    let labels = match (spec.format, spec.labels.as_deref()) {
        (DatasetFormat::Hdfs, Some(p)) => Some(read_hdfs_labels(p)?),
        (DatasetFormat::Synth, Some(p)) => Some(read_truth_labels(p)?),
        _ => None,
    };
    adapt_text(spec.format, &text, spec.columns.as_ref(), labels.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bgl_lines() {
        let text = "- 1117838570 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.50.675872 R02-M1-N0-C:J12-U11 RAS KERNEL INFO instruction cache parity error corrected\n\
                    APPREAD 1117838573 2005.06.03 R04-M1-N4-I:J18-U11 2005-06-03-15.42.53.276129 R04-M1-N4-I:J18-U11 RAS APP FATAL ciod: failed to read message prefix on control stream\n";
        let out = adapt_text(DatasetFormat::Bgl, text, None, None).unwrap();
        assert_eq!(out.lines.len(), 2);
        assert_eq!((out.lines[0].label, out.lines[0].timestamp), (Some(0), 1117838570));
        assert_eq!(out.lines[0].content, "instruction cache parity error corrected");
        assert_eq!((out.lines[1].label, out.lines[1].timestamp), (Some(1), 1117838573));
        assert_eq!(out.lines[1].line_no, 2);
    }

    #[test]
    fn hdfs_lines_join_labels() {
        let text = "081109 203615 148 INFO dfs.DataNode$PacketResponder: PacketResponder 1 for block blk_38865049064139660 terminating\n\
                    081109 203807 222 INFO dfs.DataNode$PacketResponder: PacketResponder 0 for block blk_-6952295868487656571 terminating\n";
        let labels: HashMap<String, u8> = [("blk_-6952295868487656571".to_string(), 1)].into();
        let out = adapt_text(DatasetFormat::Hdfs, text, None, Some(&labels)).unwrap();
        assert_eq!(out.lines[0].session_key.as_deref(), Some("blk_38865049064139660"));
        assert_eq!(out.lines[0].label, None);
        assert_eq!(out.lines[1].label, Some(1));
        // 2008-11-09 20:36:15 UTC
        assert_eq!(out.lines[0].timestamp, 1226262975);
        assert_eq!(out.lines[0].content, "PacketResponder 1 for block blk_38865049064139660 terminating");
    }

    #[test]
    fn hdfs_annotation_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("anomaly_label.csv");
        std::fs::write(&p, "BlockId,Label\nblk_1,Normal\nblk_-2,Anomaly\n").unwrap();
        let m = read_hdfs_labels(&p).unwrap();
        assert_eq!((m["blk_1"], m["blk_-2"]), (0, 1));
        std::fs::write(&p, "BlockId,Label\nblk_1,Weird\n").unwrap();
        assert!(matches!(read_hdfs_labels(&p), Err(Error::Parse { line: Some(2), .. })));
    }

    #[test]
    fn generic_column_map() {
        let cols = ColumnMap {
            ts: 0,
            msg: 2,
            label: None,
            session: None,
            normal_value: "0".into(),
            delimiter: None,
        };
        let out = adapt_text(DatasetFormat::Generic, "9 X hello", Some(&cols), None).unwrap();
        assert_eq!((out.lines[0].timestamp, out.lines[0].content.as_str()), (9, "hello"));
        let cols = ColumnMap {
            ts: 1,
            msg: 3,
            label: Some(0),
            session: Some(2),
            normal_value: "ok".into(),
            delimiter: Some(",".into()),
        };
        let out = adapt_text(DatasetFormat::Generic, "bad,12.7,s1,disk, full", Some(&cols), None).unwrap();
        let l = &out.lines[0];
        assert_eq!((l.timestamp, l.label, l.session_key.as_deref()), (12, Some(1), Some("s1")));
        assert_eq!(l.content, "disk, full");
    }

    #[test]
    fn malformed_budget() {
        let good = "1 s1 hello world\n".repeat(199);
        let out = adapt_text(DatasetFormat::Synth, &format!("{good}garbage\n"), None, None).unwrap();
        assert_eq!((out.total, out.malformed, out.lines.len()), (200, 1, 199));
        let err = adapt_text(DatasetFormat::Synth, &format!("{good}x\ny\nz\n"), None, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn synth_roundtrip_with_truth() {
        let spec = crate::synthgen::CorpusSpec {
            n_sequences: 10,
            ..Default::default()
        };
        let corpus = crate::synthgen::generate_corpus(&spec).unwrap();
        let labels: HashMap<String, u8> =
            corpus.truth.iter().map(|t| (t.session_key.clone(), t.label)).collect();
        let out = adapt_text(DatasetFormat::Synth, &corpus.lines.join("\n"), None, Some(&labels)).unwrap();
        assert_eq!(out.malformed, 0);
        assert_eq!(out.lines.len(), corpus.lines.len());
        assert!(out.lines.iter().all(|l| l.label.is_some()));
    }
}
