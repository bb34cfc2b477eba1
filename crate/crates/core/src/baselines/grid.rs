use serde::{Deserialize, Serialize};

use super::knn::Knn;
use super::mlp::{mlp_train, Mlp};
use super::tree::{dt_fit, dt_predict, DecisionTree};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Knn,
    Dt,
    Mlp,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Knn => "knn",
            BaselineKind::Dt => "dt",
            BaselineKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(BaselineKind::Knn),
            "dt" => Ok(BaselineKind::Dt),
            "mlp" => Ok(BaselineKind::Mlp),
            other => Err(Error::config(format!("unknown baseline `{other}` (expected knn|dt|mlp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnGrid {
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtGrid {
    /// `null` means unlimited depth.
    pub max_depth: Vec<Option<usize>>,
    pub min_leaf: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpGrid {
    pub hidden: Vec<Vec<usize>>,
    pub lr: Vec<f64>,
    pub epochs: usize,
}

impl Default for KnnGrid {
    fn default() -> Self {
        KnnGrid { k: vec![1, 3, 5, 9] }
    }
}

impl Default for DtGrid {
    fn default() -> Self {
        DtGrid {
            max_depth: vec![Some(4), Some(8), Some(16), None],
            min_leaf: vec![1, 5],
        }
    }
}

impl Default for MlpGrid {
    fn default() -> Self {
        MlpGrid {
            hidden: vec![vec![64], vec![128, 64]],
            lr: vec![1e-3, 5e-4],
            epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub knn: KnnGrid,
    pub dt: DtGrid,
    pub mlp: MlpGrid,
    /// Share of the training data used to score grid points.
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            knn: KnnGrid::default(),
            dt: DtGrid::default(),
            mlp: MlpGrid::default(),
            valid_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum HyperParams {
    Knn { k: usize },
    Dt { max_depth: Option<usize>, min_leaf: usize },
    Mlp { hidden: Vec<usize>, lr: f64, epochs: usize, seed: u64 },
}

impl GridSpec {
    /// Grid points in declaration order (the tie-break order).
    pub fn points(&self, kind: BaselineKind) -> Result<Vec<HyperParams>> {
        let pts: Vec<HyperParams> = match kind {
            BaselineKind::Knn => self.knn.k.iter().map(|&k| HyperParams::Knn { k }).collect(),
            BaselineKind::Dt => self
                .dt
                .max_depth
                .iter()
                .flat_map(|&max_depth| {
                    self.dt
                        .min_leaf
                        .iter()
                        .map(move |&min_leaf| HyperParams::Dt { max_depth, min_leaf })
                })
                .collect(),
            BaselineKind::Mlp => self
                .mlp
                .hidden
                .iter()
                .flat_map(|h| {
                    self.mlp.lr.iter().map(move |&lr| HyperParams::Mlp {
                        hidden: h.clone(),
                        lr,
                        epochs: self.mlp.epochs,
                        seed: self.seed,
                    })
                })
                .collect(),
        };
        if pts.is_empty() {
            return Err(Error::config(format!("the {} grid is empty", kind.name())));
        }
        Ok(pts)
    }
}

/// A fitted baseline classifier.
#[derive(Debug, Clone)]
pub enum Fitted {
    Knn(Knn),
    Dt(DecisionTree),
    Mlp(Mlp),
}

impl Fitted {
    pub fn fit(params: &HyperParams, x: &[Vec<f64>], y: &[u8]) -> Result<Self> {
        Ok(match params {
            HyperParams::Knn { k } => {
                if *k == 0 || *k > x.len() {
                    return Err(Error::config(format!("k = {k} exceeds {} training points", x.len())));
                }
                Fitted::Knn(Knn {
                    k: *k,
                    train: x.to_vec(),
                    labels: y.to_vec(),
                })
            }
            HyperParams::Dt { max_depth, min_leaf } => Fitted::Dt(dt_fit(x, y, *max_depth, *min_leaf)?),
            HyperParams::Mlp { hidden, lr, epochs, seed } => {
                Fitted::Mlp(mlp_train(x, y, hidden, *lr, *epochs, *seed)?)
            }
        })
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        match self {
            Fitted::Knn(m) => x.iter().map(|q| m.predict(q)).collect(),
            Fitted::Dt(t) => Ok(x.iter().map(|q| dt_predict(t, q)).collect()),
            Fitted::Mlp(m) => m.predict(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub params: HyperParams,
    pub f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: HyperParams,
    pub best_f1: f64,
    pub table: Vec<GridRow>,
}

/// Scores every grid point by validation F1; the first best point wins.
pub fn grid_search(
    kind: BaselineKind,
    grid: &GridSpec,
    train: (&[Vec<f64>], &[u8]),
    valid: (&[Vec<f64>], &[u8]),
) -> Result<GridResult> {
    let mut table = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in grid.points(kind)?.into_iter().enumerate() {
        let scored = Fitted::fit(&p, train.0, train.1)
            .and_then(|m| m.predict(valid.0))
            .and_then(|pred| MetricsReport::evaluate(&pred, valid.1));
        match scored {
            Ok(r) => {
                if best.is_none_or(|(_, f)| r.f1 > f) {
                    best = Some((i, r.f1));
                }
                table.push(GridRow { params: p, f1: Some(r.f1), error: None });
            }
            Err(e) => table.push(GridRow { params: p, f1: None, error: Some(e.to_string()) }),
        }
    }
    let (i, best_f1) = best.ok_or_else(|| {
        Error::data(format!("every {} grid point failed: {:?}", kind.name(), table[0].error))
    })?;
    Ok(GridResult {
        best: table[i].params.clone(),
        best_f1,
        table,
    })
}
