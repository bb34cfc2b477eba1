//! parse → assemble → train → eval, each stage writing its outputs into
//! the run directory and recording their hashes in `stages.json`.
//!
//! A stage is skipped when its recorded input hash (config subsection plus
//! the hashes of the files it reads) is unchanged and its outputs still
//! hash to the recorded values. An output that exists but no longer
//! matches its recorded hash is treated as corruption and aborts the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::assembler::{assemble, split_train_test, Grouping, LabeledSequence, SplitSpec};
use crate::baselines::{run_baseline, BaselineKind, GridSpec};
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::jsonl::{read_json, read_jsonl, write_json, write_jsonl};
use crate::metrics::MetricsReport;
use crate::model::{fit, label_from_logit, Model, ModelConfig, TrainConfig};
use crate::numeric::sigmoid;
use crate::parser::{parse_lines, Event, ParserConfig, Template};

use super::adapters::{adapt_dataset, InputSpec};
use super::config::PipelineConfig;

pub const STAGE_LOG: &str = "stages.json";
pub const TEMPLATES: &str = "templates.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const SEQUENCES: &str = "sequences.jsonl";
pub const TRAIN_SET: &str = "train.jsonl";
pub const TEST_SET: &str = "test.jsonl";
pub const CHECKPOINT: &str = "model.ckpt.json";
pub const HISTORY: &str = "history.json";
pub const PREDICTIONS: &str = "preds.jsonl";
pub const REPORT: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// One `preds.jsonl` record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub prob: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    /// Output file name → SHA-256 of its content.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLog {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

fn stage_err(stage: &str, e: impl std::fmt::Display) -> Error {
    Error::Stage {
        stage: stage.to_string(),
        cause: e.to_string(),
    }
}

/// A run directory with its stage log.
pub struct RunDir {
    dir: PathBuf,
    log: StageLog,
}

impl RunDir {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join(STAGE_LOG);
        let log = if log_path.exists() {
            read_json(&log_path).map_err(|e| stage_err("setup", format!("unreadable stage log: {e}")))?
        } else {
            StageLog::default()
        };
        Ok(RunDir {
            dir: dir.to_path_buf(),
            log,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log(&self) -> &StageLog {
        &self.log
    }

    /// Hash of a file this stage reads, failing with the stage name.
    fn input_file(&self, stage: &str, path: &Path) -> Result<String> {
        hash_file(path).map_err(|e| stage_err(stage, e))
    }

    /// Runs `body` unless the stage's previous outputs are still valid.
    pub fn stage(
        &mut self,
        name: &str,
        inputs: serde_json::Value,
        outputs: &[&str],
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<StageStatus> {
        let input_hash = hash_bytes(serde_json::to_string(&json!({"stage": name, "inputs": inputs}))?.as_bytes());
        if let Some(rec) = self.log.stages.get(name).filter(|r| r.input_hash == input_hash) {
            let mut intact = true;
            for out in outputs {
                let p = self.path(out);
                if !p.exists() {
                    intact = false;
                    continue;
                }
                if rec.outputs.get(*out) != Some(&hash_file(&p)?) {
                    return Err(stage_err(
                        name,
                        format!("{} was modified after it was written (hash mismatch)", p.display()),
                    ));
                }
            }
            if intact {
                log::info!("stage {name}: up to date, skipped");
                return Ok(StageStatus::Skipped);
            }
        }
        log::info!("stage {name}: running");
        body(&self.dir).map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => stage_err(name, e),
        })?;
        let mut hashes = BTreeMap::new();
        for out in outputs {
            hashes.insert(out.to_string(), hash_file(&self.path(out)).map_err(|e| stage_err(name, e))?);
        }
        self.log.stages.insert(
            name.to_string(),
            StageRecord {
                input_hash,
                outputs: hashes,
            },
        );
        write_json(&self.path(STAGE_LOG), &self.log)?;
        Ok(StageStatus::Ran)
    }

    fn output_hash(&self, stage: &str, file: &str) -> Result<String> {
        self.log
            .stages
            .get(stage)
            .and_then(|r| r.outputs.get(file))
            .cloned()
            .ok_or_else(|| stage_err(stage, format!("no recorded output {file}")))
    }
}

pub fn stage_parse(run: &mut RunDir, input: &InputSpec, parser: &ParserConfig) -> Result<StageStatus> {
    let files = input
        .files()
        .iter()
        .map(|p| run.input_file("parse", p))
        .collect::<Result<Vec<_>>>()?;
    let inputs = json!({
        "format": input.format,
        "columns": input.columns,
        "files": files,
        "parser": parser,
    });
    run.stage("parse", inputs, &[TEMPLATES, EVENTS], |dir| {
        let adapted = adapt_dataset(input)?;
        let parsed = parse_lines(&adapted.lines, parser)?;
        write_jsonl(&dir.join(TEMPLATES), &parsed.templates)?;
        write_jsonl(&dir.join(EVENTS), &parsed.events)?;
        Ok(())
    })
}

pub fn stage_assemble(run: &mut RunDir, grouping: &Grouping, split: &SplitSpec) -> Result<StageStatus> {
    let inputs = json!({
        "events": run.output_hash("parse", EVENTS)?,
        "grouping": grouping,
        "split": split,
    });
    run.stage("assemble", inputs, &[SEQUENCES, TRAIN_SET, TEST_SET], |dir| {
        let events: Vec<Event> = read_jsonl(&dir.join(EVENTS))?;
        let seqs = assemble(&events, grouping)?;
        let (train, test) = split_train_test(&seqs, split)?;
        write_jsonl(&dir.join(SEQUENCES), &seqs)?;
        write_jsonl(&dir.join(TRAIN_SET), &train)?;
        write_jsonl(&dir.join(TEST_SET), &test)?;
        Ok(())
    })
}

/// Builds the embedding provider for a training run. Random embeddings
/// need no template file; the other modes do.
pub fn build_provider(model: &ModelConfig, templates: Option<&[Template]>, seqs: &[LabeledSequence]) -> Result<EmbeddingProvider> {
    use crate::embeddings::EmbeddingMode;
    match templates {
        Some(t) => EmbeddingProvider::build(&model.embedding, t),
        None if matches!(model.embedding.mode, EmbeddingMode::Random | EmbeddingMode::Zero) => {
            let mut ids: Vec<usize> = seqs.iter().flat_map(|s| s.events.iter().copied()).collect();
            ids.sort_unstable();
            ids.dedup();
            let t: Vec<Template> = ids
                .into_iter()
                .map(|template_id| Template {
                    template_id,
                    tokens: Vec::new(),
                })
                .collect();
            EmbeddingProvider::build(&model.embedding, &t)
        }
        None => Err(Error::config(format!(
            "{} embeddings need the template file",
            model.embedding.mode.name()
        ))),
    }
}

/// Trains on `data/train.jsonl` and writes the checkpoint into `run`.
pub fn stage_train(run: &mut RunDir, data: &Path, model: &ModelConfig, tc: &TrainConfig) -> Result<StageStatus> {
    let train_path = data.join(TRAIN_SET);
    let templates_path = data.join(TEMPLATES);
    let mut inputs = json!({
        "train": run.input_file("train", &train_path)?,
        "templates": run.input_file("train", &templates_path)?,
        "model": model,
        "config": tc,
    });
    if let Some(p) = model.embedding.path.as_deref() {
        inputs["embedding_file"] = json!(run.input_file("train", p)?);
    }
    run.stage("train", inputs, &[CHECKPOINT, HISTORY], |dir| {
        let train: Vec<LabeledSequence> = read_jsonl(&train_path)?;
        let templates: Vec<Template> = read_jsonl(&templates_path)?;
        let provider = build_provider(model, Some(&templates), &train)?;
        let (fitted, history) = fit(model, tc, provider, &train)?;
        fitted.save(&dir.join(CHECKPOINT))?;
        write_json(&dir.join(HISTORY), &history)?;
        Ok(())
    })
}

/// Scores sequences with a trained model.
pub fn predict_sequences(model: &Model, seqs: &[LabeledSequence], batch_size: usize) -> Result<Vec<Prediction>> {
    let thr = model.config.threshold;
    Ok(model
        .logits(seqs, batch_size)?
        .into_iter()
        .enumerate()
        .map(|(index, z)| Prediction {
            index,
            prob: sigmoid(z),
            label: label_from_logit(z, thr),
        })
        .collect())
}

pub fn stage_eval(run: &mut RunDir, data: &Path, batch_size: usize) -> Result<StageStatus> {
    let test_path = data.join(TEST_SET);
    let inputs = json!({
        "test": run.input_file("eval", &test_path)?,
        "model": run.output_hash("train", CHECKPOINT)?,
    });
    run.stage("eval", inputs, &[PREDICTIONS, REPORT, REPORT_TEXT], |dir| {
        let test: Vec<LabeledSequence> = read_jsonl(&test_path)?;
        let model = Model::load(&dir.join(CHECKPOINT))?;
        let preds = predict_sequences(&model, &test, batch_size)?;
        let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
        let pl: Vec<u8> = preds.iter().map(|p| p.label).collect();
        let report = MetricsReport::evaluate(&pl, &labels)?;
        write_jsonl(&dir.join(PREDICTIONS), &preds)?;
        write_json(&dir.join(REPORT), &report)?;
        std::fs::write(dir.join(REPORT_TEXT), report.to_string()).map_err(|e| Error::io(dir.join(REPORT_TEXT), e))?;
        Ok(())
    })
}

pub fn baseline_file(kind: BaselineKind) -> String {
    format!("baseline_{}.json", kind.name())
}

pub fn stage_baseline(run: &mut RunDir, data: &Path, kind: BaselineKind, grid: &GridSpec) -> Result<StageStatus> {
    let stage = format!("baseline_{}", kind.name());
    let (train_path, test_path) = (data.join(TRAIN_SET), data.join(TEST_SET));
    let inputs = json!({
        "train": run.input_file(&stage, &train_path)?,
        "test": run.input_file(&stage, &test_path)?,
        "model": kind,
        "grid": grid,
    });
    let file = baseline_file(kind);
    run.stage(&stage, inputs, &[&file], |dir| {
        let train: Vec<LabeledSequence> = read_jsonl(&train_path)?;
        let test: Vec<LabeledSequence> = read_jsonl(&test_path)?;
        let report = run_baseline(kind, grid, &train, &test)?;
        write_json(&dir.join(&file), &report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub stages: Vec<(String, StageStatus)>,
    pub report: MetricsReport,
    pub dir: PathBuf,
}

/// Runs every stage of `config` in `out`.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<PipelineOutcome> {
    config.validate()?;
    for p in config.input.files() {
        if !p.exists() {
            return Err(Error::data(format!("input file {} does not exist", p.display())));
        }
    }
    let mut run = RunDir::open(out)?;
    let mut stages = vec![
        ("parse".to_string(), stage_parse(&mut run, &config.input, &config.parser)?),
        ("assemble".to_string(), stage_assemble(&mut run, &config.grouping, &config.split)?),
    ];
    stages.push(("train".into(), stage_train(&mut run, out, &config.model, &config.train)?));
    stages.push(("eval".into(), stage_eval(&mut run, out, config.train.batch_size)?));
    for &kind in &config.baselines {
        stages.push((format!("baseline_{}", kind.name()), stage_baseline(&mut run, out, kind, &config.grid)?));
    }
    let report = read_json(&run.path(REPORT)).map_err(|e| stage_err("eval", e))?;
    Ok(PipelineOutcome {
        stages,
        report,
        dir: out.to_path_buf(),
    })
}
