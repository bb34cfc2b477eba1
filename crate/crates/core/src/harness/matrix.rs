//! Feature-ablation matrix: many model cells over one shared corpus.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::assembler::{Grouping, SplitSpec};
use crate::baselines::{BaselineKind, BaselineReport, GridSpec};
use crate::embeddings::EmbeddingMode;
use crate::encodings::EncodingMode;
use crate::error::{Error, Result};
use crate::jsonl::{read_json, write_json};
use crate::metrics::MetricsReport;
use crate::model::{ModelConfig, TrainConfig};
use crate::parser::ParserConfig;

use super::adapters::InputSpec;
use super::config::{deserialize_model, resolve};
use super::pipeline::{baseline_file, stage_assemble, stage_baseline, stage_eval, stage_parse, stage_train, RunDir, REPORT};

pub const MATRIX_REPORT: &str = "matrix.json";
pub const MATRIX_TEXT: &str = "matrix.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CellKind {
    Transformer {
        embedding: EmbeddingMode,
        encoding: EncodingMode,
        /// Embedding file for `file` cells.
        #[serde(default)]
        embedding_path: Option<PathBuf>,
    },
    Baseline { model: BaselineKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    #[serde(flatten)]
    pub kind: CellKind,
    /// Seeds initialisation, embeddings, shuffling and the grid holdout.
    pub seed: u64,
}

impl Cell {
    pub fn transformer(embedding: EmbeddingMode, encoding: EncodingMode, seed: u64) -> Self {
        Cell {
            name: format!("{}+{}", embedding.name(), encoding.name()),
            kind: CellKind::Transformer {
                embedding,
                encoding,
                embedding_path: None,
            },
            seed,
        }
    }

    pub fn baseline(model: BaselineKind, seed: u64) -> Self {
        Cell {
            name: format!("mcv+{}", model.name()),
            kind: CellKind::Baseline { model },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub input: InputSpec,
    #[serde(default)]
    pub parser: ParserConfig,
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub split: SplitSpec,
    /// Base model; each transformer cell overrides embedding mode,
    /// encoding and seed.
    #[serde(default, deserialize_with = "deserialize_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: GridSpec,
    pub cells: Vec<Cell>,
}

/// The full ablation: every embedding × encoding, the encoding-only cells
/// (shared zero embedding with RTEE or Time2Vec) and the three count-vector
/// baselines. `file` cells are included only when an embedding file is given.
pub fn standard_cells(seed: u64, embedding_file: Option<&Path>) -> Vec<Cell> {
    let encodings = [EncodingMode::None, EncodingMode::Positional, EncodingMode::Rtee, EncodingMode::Time2vec];
    let mut cells = Vec::new();
    for emb in [EmbeddingMode::Random, EmbeddingMode::Hashed, EmbeddingMode::File] {
        if emb == EmbeddingMode::File && embedding_file.is_none() {
            continue;
        }
        for enc in encodings {
            let mut c = Cell::transformer(emb, enc, seed);
            if let CellKind::Transformer { embedding_path, .. } = &mut c.kind {
                *embedding_path = (emb == EmbeddingMode::File).then(|| embedding_file.unwrap().to_path_buf());
            }
            cells.push(c);
        }
    }
    for enc in [EncodingMode::Rtee, EncodingMode::Time2vec] {
        cells.push(Cell::transformer(EmbeddingMode::Zero, enc, seed));
    }
    for kind in [BaselineKind::Knn, BaselineKind::Dt, BaselineKind::Mlp] {
        cells.push(Cell::baseline(kind, seed));
    }
    cells
}

impl ExperimentMatrix {
    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        self.parser.validate()?;
        if self.cells.is_empty() {
            return Err(Error::config("the matrix has no cells"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cells {
            if c.name.is_empty() || c.name.contains(['/', '\\']) || c.name.starts_with('.') {
                return Err(Error::config(format!("invalid cell name `{}`", c.name)));
            }
            if !seen.insert(&c.name) {
                return Err(Error::config(format!("duplicate cell name `{}`", c.name)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: ExperimentMatrix = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(&mut m.input.path, base);
        if let Some(p) = m.input.labels.as_mut() {
            resolve(p, base);
        }
        for c in &mut m.cells {
            if let CellKind::Transformer {
                embedding_path: Some(p),
                ..
            } = &mut c.kind
            {
                resolve(p, base);
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// The model config a transformer cell trains with.
    pub fn cell_model(&self, cell: &Cell) -> Option<(ModelConfig, TrainConfig)> {
        let CellKind::Transformer {
            embedding,
            encoding,
            embedding_path,
        } = &cell.kind
        else {
            return None;
        };
        let mut model = self.model.clone();
        model.embedding.mode = *embedding;
        model.embedding.seed = cell.seed;
        model.embedding.path = embedding_path.clone();
        model.encoding = *encoding;
        model.seed = cell.seed;
        let train = TrainConfig {
            seed: cell.seed,
            ..self.train.clone()
        };
        Some((model, train))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub cell: String,
    /// `transformer` or `baseline`.
    pub kind: String,
    pub features: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    /// Sorted by F1, best first; failed cells last; ties by cell name.
    pub rows: Vec<MatrixRow>,
}

impl MatrixReport {
    pub fn row(&self, cell: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.cell == cell)
    }
}

fn describe(cell: &Cell) -> (String, String) {
    match &cell.kind {
        CellKind::Transformer { embedding, encoding, .. } => (
            "transformer".into(),
            format!("embedding={} encoding={}", embedding.name(), encoding.name()),
        ),
        CellKind::Baseline { model } => ("baseline".into(), format!("mcv {}", model.name())),
    }
}

fn run_cell(m: &ExperimentMatrix, cell: &Cell, data: &Path, dir: &Path) -> Result<MetricsReport> {
    let mut run = RunDir::open(dir)?;
    match &cell.kind {
        CellKind::Transformer { .. } => {
            let (model, train) = m.cell_model(cell).expect("transformer cell");
            model.validate()?;
            stage_train(&mut run, data, &model, &train)?;
            stage_eval(&mut run, data, train.batch_size)?;
            read_json(&dir.join(REPORT))
        }
        CellKind::Baseline { model } => {
            let grid = GridSpec {
                seed: cell.seed,
                ..m.grid.clone()
            };
            stage_baseline(&mut run, data, *model, &grid)?;
            let report: BaselineReport = read_json(&dir.join(baseline_file(*model)))?;
            Ok(report.test)
        }
    }
}

/// Prepares the shared data once, then runs the cells on up to `jobs`
/// threads. A failing cell becomes a row with an error; the others go on.
pub fn run_matrix(m: &ExperimentMatrix, out: &Path, jobs: usize) -> Result<MatrixReport> {
    m.validate()?;
    for p in m.input.files() {
        if !p.exists() {
            return Err(Error::data(format!("input file {} does not exist", p.display())));
        }
    }
    let data = out.join("data");
    let mut run = RunDir::open(&data)?;
    stage_parse(&mut run, &m.input, &m.parser)?;
    stage_assemble(&mut run, &m.grouping, &m.split)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<MatrixRow>>> = Mutex::new(vec![None; m.cells.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, m.cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = m.cells.get(i) else { break };
                let dir = out.join("cells").join(&cell.name);
                let (kind, features) = describe(cell);
                let outcome = run_cell(m, cell, &data, &dir);
                if let Err(e) = &outcome {
                    log::warn!("cell {} failed: {e}", cell.name);
                }
                let row = match outcome {
                    Ok(r) => MatrixRow {
                        cell: cell.name.clone(),
                        kind,
                        features,
                        precision: Some(r.precision),
                        recall: Some(r.recall),
                        specificity: Some(r.specificity),
                        f1: Some(r.f1),
                        error: None,
                    },
                    Err(e) => MatrixRow {
                        cell: cell.name.clone(),
                        kind,
                        features,
                        precision: None,
                        recall: None,
                        specificity: None,
                        f1: None,
                        error: Some(e.to_string()),
                    },
                };
                results.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });
    let mut rows: Vec<MatrixRow> = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every cell attempted"))
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &MatrixRow| r.f1.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then_with(|| a.cell.cmp(&b.cell))
    });
    let report = MatrixReport { rows };
    write_json(&out.join(MATRIX_REPORT), &report)?;
    let text = super::report::render_matrix(&report);
    std::fs::write(out.join(MATRIX_TEXT), text).map_err(|e| Error::io(out.join(MATRIX_TEXT), e))?;
    Ok(report)
}
