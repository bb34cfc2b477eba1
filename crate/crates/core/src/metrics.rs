//! Confusion counts and the precision / recall / specificity / F1 scores.
//! Anomalies (label 1) are the positive class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::data("no predictions to score"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn scores(c: &ConfusionCounts) -> Scores {
    let mut degenerate = false;
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
    let specificity = ratio(c.tn, c.tn + c.fp, &mut degenerate);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, &mut degenerate);
    Scores {
        precision,
        recall,
        specificity,
        f1,
        degenerate,
    }
}

/// The `report.json` document: counts and scores side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub degenerate: bool,
}

impl MetricsReport {
    pub fn new(c: &ConfusionCounts) -> Self {
        let s = scores(c);
        MetricsReport {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            precision: s.precision,
            recall: s.recall,
            specificity: s.specificity,
            f1: s.f1,
            degenerate: s.degenerate,
        }
    }

    pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        Ok(Self::new(&confusion(predictions, labels)?))
    }

    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10}", "metric", "value")?;
        for (name, v) in [
            ("precision", self.precision),
            ("recall", self.recall),
            ("specificity", self.specificity),
            ("f1", self.f1),
        ] {
            writeln!(f, "{name:<12} {v:>10.4}")?;
        }
        writeln!(
            f,
            "{:<12} {:>10}",
            "counts",
            format!("{}/{}/{}/{}", self.tp, self.fp, self.tn, self.fn_)
        )?;
        if self.degenerate {
            writeln!(f, "(degenerate: a ratio had a zero denominator)")?;
        }
        Ok(())
    }
}
