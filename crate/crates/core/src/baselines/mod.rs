//! Message-count-vector baselines: k-nearest neighbours, a CART decision
//! tree and a small MLP, each tuned by grid search on a held-out split.

pub mod grid;
pub mod knn;
pub mod mcv;
pub mod mlp;
pub mod tree;

use serde::{Deserialize, Serialize};

pub use grid::{grid_search, BaselineKind, Fitted, GridResult, GridRow, GridSpec, HyperParams};
pub use knn::knn_classify;
pub use mcv::{build_mcv, Mcv, Vocab};
pub use mlp::mlp_train;
pub use tree::{dt_fit, dt_predict, DecisionTree};

use crate::assembler::LabeledSequence;
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::holdout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub model: BaselineKind,
    pub best: HyperParams,
    pub valid_f1: f64,
    pub grid: Vec<GridRow>,
    pub test: MetricsReport,
    pub predictions: Vec<u8>,
}

fn features(seqs: &[LabeledSequence], vocab: &Vocab) -> (Vec<Vec<f64>>, Vec<u8>) {
    seqs.iter()
        .map(|s| (build_mcv(&s.events, vocab).as_features(), s.label))
        .unzip()
}

/// Grid-searches on a held-out part of `train`, refits the best point on
/// all of `train`, and scores `test`.
pub fn run_baseline(
    kind: BaselineKind,
    grid: &GridSpec,
    train: &[LabeledSequence],
    test: &[LabeledSequence],
) -> Result<BaselineReport> {
    let vocab = Vocab::from_sequences(train.iter().map(|s| s.events.as_slice()));
    let (fit_part, valid_part) = holdout(train, grid.valid_fraction, grid.seed)?;
    let (fx, fy) = features(&fit_part, &vocab);
    let (vx, vy) = features(&valid_part, &vocab);
    let searched = grid_search(kind, grid, (&fx, &fy), (&vx, &vy))?;
    let (tx, ty) = features(train, &vocab);
    let model = Fitted::fit(&searched.best, &tx, &ty)?;
    let (qx, qy) = features(test, &vocab);
    let predictions = model.predict(&qx)?;
    Ok(BaselineReport {
        model: kind,
        best: searched.best,
        valid_f1: searched.best_f1,
        grid: searched.table,
        test: MetricsReport::evaluate(&predictions, &qy)?,
        predictions,
    })
}
