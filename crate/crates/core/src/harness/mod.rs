//! Orchestration: dataset adapters, the staged pipeline, the ablation
//! matrix and report rendering.

pub mod adapters;
pub mod config;
pub mod matrix;
pub mod pipeline;
pub mod report;

pub use adapters::{adapt_dataset, adapt_text, AdaptedInput, ColumnMap, DatasetFormat, InputSpec};
pub use config::{PipelineConfig, TrainJob};
pub use matrix::{run_matrix, standard_cells, Cell, CellKind, ExperimentMatrix, MatrixReport, MatrixRow};
pub use pipeline::{run_pipeline, PipelineOutcome, Prediction, StageStatus};
