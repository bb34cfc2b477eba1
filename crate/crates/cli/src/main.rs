use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use loglab::assembler::{assemble, split_train_test, Grouping, LabeledSequence, SplitMode, SplitSpec, WindowSpec};
use loglab::baselines::{run_baseline, BaselineKind, GridSpec};
use loglab::harness::pipeline::{build_provider, predict_sequences, Prediction};
use loglab::harness::report::render_file;
use loglab::harness::{adapt_dataset, run_matrix, run_pipeline, ColumnMap, DatasetFormat, ExperimentMatrix, InputSpec, PipelineConfig, TrainJob};
use loglab::jsonl::{read_json, read_jsonl, write_json, write_jsonl};
use loglab::metrics::MetricsReport;
use loglab::model::{fit, Model};
use loglab::parser::{default_masking_rules, parse_lines, Event, ParserConfig, Template};
use loglab::synthgen::{generate_corpus, CorpusSpec};
use loglab::{Error, Result};

/// Log anomaly detection: template mining, sequence assembly, transformer
/// and count-vector classifiers, synthetic corpora and ablation runs.
#[derive(Parser)]
#[command(name = "loglab", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine templates from a raw log file.
    Parse(ParseArgs),
    /// Group parsed events into labelled sequences and split them.
    Assemble(AssembleArgs),
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Train the transformer classifier.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Template file; required for hashed and file embeddings.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Where to write the per-epoch history.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score sequences with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Compare predictions with the labels of the scored sequences.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Grid-search and evaluate a count-vector baseline.
    Baseline {
        #[arg(long)]
        model: BaselineKind,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run an ablation matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a report, baseline or matrix file as a text table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the whole parse → assemble → train → eval pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "generic")]
    format: DatasetFormat,
    /// Annotation file (HDFS label CSV or synthetic truth.jsonl).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Column map for the generic format, as JSON, e.g. '{"ts":0,"msg":2}'.
    #[arg(long)]
    columns: Option<String>,
    /// Parser settings (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the built-in masking rules when the config sets none.
    #[arg(long)]
    default_masks: bool,
    #[arg(long)]
    templates: PathBuf,
    #[arg(long)]
    events: PathBuf,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long)]
    events: PathBuf,
    /// All sequences, in assembly order.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Group by session key instead of windowing.
    #[arg(long, conflicts_with = "fixed_size")]
    session: bool,
    /// Fixed windows of this size (stepped by --step).
    #[arg(long)]
    fixed_size: Option<usize>,
    #[arg(long, default_value_t = 128)]
    min_len: usize,
    #[arg(long, default_value_t = 512)]
    max_len: usize,
    #[arg(long, default_value_t = 64)]
    step: usize,
    #[arg(long, default_value = "chrono")]
    split: SplitMode,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_cmd(a: ParseArgs) -> Result<()> {
    let mut parser: ParserConfig = match &a.config {
        Some(p) => read_json(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
        None => ParserConfig::default(),
    };
    if a.default_masks && parser.masking_rules.is_empty() {
        parser.masking_rules = default_masking_rules();
    }
    parser.validate()?;
    let columns = a
        .columns
        .as_deref()
        .map(serde_json::from_str::<ColumnMap>)
        .transpose()
        .map_err(|e| Error::config(format!("--columns: {e}")))?;
    let spec = InputSpec {
        format: a.format,
        path: a.input,
        labels: a.labels,
        columns,
    };
    let adapted = adapt_dataset(&spec)?;
    let parsed = parse_lines(&adapted.lines, &parser)?;
    write_jsonl(&a.templates, &parsed.templates)?;
    write_jsonl(&a.events, &parsed.events)?;
    eprintln!(
        "{} lines ({} malformed, {} empty after masking) → {} templates",
        adapted.total,
        adapted.malformed,
        parsed.dropped,
        parsed.templates.len()
    );
    Ok(())
}

fn assemble_cmd(a: AssembleArgs) -> Result<()> {
    let grouping = if a.session {
        Grouping::Session
    } else if let Some(size) = a.fixed_size {
        Grouping::Fixed { size, step: a.step }
    } else {
        Grouping::Variable(WindowSpec {
            min_len: a.min_len,
            max_len: a.max_len,
            step: a.step,
            seed: a.seed,
        })
    };
    let events: Vec<Event> = read_jsonl(&a.events)?;
    let seqs = assemble(&events, &grouping)?;
    write_jsonl(&a.out, &seqs)?;
    if a.train.is_some() || a.test.is_some() {
        let spec = SplitSpec {
            train_fraction: a.train_fraction,
            mode: a.split,
            seed: a.seed,
        };
        let (train, test) = split_train_test(&seqs, &spec)?;
        if let Some(p) = &a.train {
            write_jsonl(p, &train)?;
        }
        if let Some(p) = &a.test {
            write_jsonl(p, &test)?;
        }
    }
    eprintln!("{} sequences", seqs.len());
    Ok(())
}

fn train_cmd(config: &Path, train: &Path, out: &Path, templates: Option<&Path>, history: Option<&Path>) -> Result<()> {
    let job = TrainJob::load(config)?;
    let seqs: Vec<LabeledSequence> = read_jsonl(train)?;
    let templates: Option<Vec<Template>> = templates.map(read_jsonl).transpose()?;
    let provider = build_provider(&job.model, templates.as_deref(), &seqs)?;
    let (model, hist) = fit(&job.model, &job.train, provider, &seqs)?;
    model.save(out)?;
    if let Some(h) = history {
        write_json(h, &hist)?;
    }
    eprintln!("best epoch {} (validation F1 {:.4})", hist.best_epoch, hist.epochs[hist.best_epoch].valid_f1);
    Ok(())
}

fn eval_cmd(preds: &Path, labels: &Path, report: &Path) -> Result<()> {
    let preds: Vec<Prediction> = read_jsonl(preds)?;
    let seqs: Vec<LabeledSequence> = read_jsonl(labels)?;
    if preds.len() != seqs.len() {
        return Err(Error::data(format!(
            "{} predictions for {} sequences",
            preds.len(),
            seqs.len()
        )));
    }
    let mut pl = vec![0u8; seqs.len()];
    for p in &preds {
        *pl.get_mut(p.index)
            .ok_or_else(|| Error::data(format!("prediction index {} out of range", p.index)))? = p.label;
    }
    let truth: Vec<u8> = seqs.iter().map(|s| s.label).collect();
    let r = MetricsReport::evaluate(&pl, &truth)?;
    write_json(report, &r)?;
    print!("{r}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse(a) => parse_cmd(a),
        Command::Assemble(a) => assemble_cmd(a),
        Command::Synth { spec, out, truth } => {
            let spec: CorpusSpec = match spec {
                Some(p) => read_json(&p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
                None => CorpusSpec::default(),
            };
            let corpus = generate_corpus(&spec)?;
            let mut text = corpus.lines.join("\n");
            text.push('\n');
            std::fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
            write_jsonl(&truth, &corpus.truth)
        }
        Command::Train {
            config,
            train,
            out,
            templates,
            history,
        } => train_cmd(&config, &train, &out, templates.as_deref(), history.as_deref()),
        Command::Predict {
            model,
            input,
            out,
            batch_size,
        } => {
            let model = Model::load(&model)?;
            let seqs: Vec<LabeledSequence> = read_jsonl(&input)?;
            write_jsonl(&out, &predict_sequences(&model, &seqs, batch_size.max(1))?)
        }
        Command::Eval { preds, labels, report } => eval_cmd(&preds, &labels, &report),
        Command::Baseline {
            model,
            grid,
            train,
            test,
            report,
        } => {
            let grid: GridSpec = match grid {
                Some(p) => read_json(&p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
                None => GridSpec::default(),
            };
            let train: Vec<LabeledSequence> = read_jsonl(&train)?;
            let test: Vec<LabeledSequence> = read_jsonl(&test)?;
            let r = run_baseline(model, &grid, &train, &test)?;
            write_json(&report, &r)?;
            print!("{}", r.test);
            Ok(())
        }
        Command::Matrix { config, out, jobs } => {
            let m = ExperimentMatrix::load(&config)?;
            run_matrix(&m, &out, jobs)?;
            print!("{}", render_file(&out.join(loglab::harness::matrix::MATRIX_REPORT))?);
            Ok(())
        }
        Command::Report { input } => {
            print!("{}", render_file(&input)?);
            Ok(())
        }
        Command::Run { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let outcome = run_pipeline(&cfg, &out)?;
            for (stage, status) in &outcome.stages {
                eprintln!("{stage}: {status:?}");
            }
            print!("{}", outcome.report);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
