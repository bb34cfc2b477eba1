//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed. Set
//! `ACCEPTANCE_ONLY=<substr>[,<substr>...]` to run a subset of criteria.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use loglab::assembler::LabeledSequence;
use loglab::baselines::BaselineKind;
use loglab::embeddings::{EmbeddingMode, EmbeddingProvider};
use loglab::encodings::{rtee_encode, sinusoidal_encode, EncodingMode, SinusoidalParams};
use loglab::harness::{run_matrix, run_pipeline, Cell, ExperimentMatrix, InputSpec, MatrixReport, PipelineConfig};
use loglab::harness::adapters::DatasetFormat;
use loglab::jsonl::write_jsonl;
use loglab::metrics::{ConfusionCounts, MetricsReport};
use loglab::model::{Model, ModelConfig, TrainConfig};
use loglab::numeric::{grad_check, AttentionLayout, GradCheckConfig, ParamStore, Tape, Tensor};
use loglab::parser::{default_masking_rules, ParserConfig};
use loglab::synthgen::{generate_corpus, AnomalyKind, CorpusSpec};

const CHANCE_F1: f64 = 0.5;
const GRAD_TOL: f64 = 1e-4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- numeric

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Grad-checks `build` over parameters named `p0..` with the given shapes;
/// the objective is a fixed random projection of the op output.
fn check_op(
    seed: u64,
    shapes: &[(usize, usize)],
    build: impl Fn(&mut Tape, &[loglab::numeric::Var]) -> loglab::Result<loglab::numeric::Var>,
) -> loglab::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        store.insert(format!("p{i}"), Tensor::new(vec![r, c], rand_vec(&mut rng, r * c))?)?;
    }
    let probe_seed = rng.random::<u64>();
    let report = grad_check(&mut store, &GradCheckConfig { seed, ..GradCheckConfig::default() }, |s, with_grad| {
        let mut tape = Tape::new();
        let vars = (0..shapes.len())
            .map(|i| tape.param(s, &format!("p{i}")))
            .collect::<loglab::Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        let (_, c) = tape.shape(out);
        let w = tape.constant(c, 1, rand_vec(&mut ChaCha8Rng::seed_from_u64(probe_seed), c))?;
        let proj = tape.matmul(out, w)?;
        let loss = tape.sum(proj);
        if with_grad {
            tape.backward_into(loss, s)?;
        }
        Ok(tape.scalar(loss))
    })?;
    Ok(report.max_rel_error)
}

fn op_checks(seed: u64) -> loglab::Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let (r, k, c) = (rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6));
    let mask: Vec<bool> = (0..c).map(|j| j == 0 || rng.random_bool(0.7)).collect();
    let tau: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..20.0)).collect();
    let idx: Vec<Option<usize>> = (0..r + 2).map(|i| (i % 3 != 1).then(|| rng.random_range(0..r))).collect();
    let targets: Vec<f64> = (0..r).map(|i| (i % 2) as f64).collect();
    let (batch, seq_len, heads) = (2, 4, 2);
    let d = 4;
    let amask: Vec<bool> = vec![true, true, true, false, true, true, false, false];
    let mut out = Vec::new();
    out.push(("matmul", check_op(seed, &[(r, k), (k, c)], |t, v| t.matmul(v[0], v[1]))?));
    out.push(("add_bias", check_op(seed, &[(r, c), (1, c)], |t, v| t.add_bias(v[0], v[1]))?));
    out.push(("linear", check_op(seed, &[(r, k), (k, c), (1, c)], |t, v| t.linear(v[0], v[1], v[2]))?));
    out.push(("add", check_op(seed, &[(r, c), (r, c)], |t, v| t.add(v[0], v[1]))?));
    out.push(("relu", check_op(seed, &[(r, c)], |t, v| Ok(t.relu(v[0])))?));
    out.push(("layer_norm", check_op(seed, &[(r, c), (1, c), (1, c)], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))?));
    out.push(("masked_softmax", check_op(seed, &[(r, c)], |t, v| t.masked_softmax(v[0], &mask))?));
    let layout = AttentionLayout::new(batch, seq_len, amask.clone())?;
    out.push((
        "attention",
        check_op(seed, &[(batch * seq_len, d), (batch * seq_len, d), (batch * seq_len, d)], |t, v| {
            t.attention(v[0], v[1], v[2], heads, &layout)
        })?,
    ));
    out.push(("gather_rows", check_op(seed, &[(r, c)], |t, v| t.gather_rows(v[0], idx.clone()))?));
    out.push(("time2vec", check_op(seed, &[(1, c), (1, c)], |t, v| t.time2vec(&tau, v[0], v[1]))?));
    out.push((
        "dropout",
        check_op(seed, &[(r, c)], |t, v| Ok(t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(seed))))?,
    ));
    out.push((
        "bce_with_logits",
        check_op(seed, &[(r, 1)], |t, v| {
            let l = t.bce_with_logits(v[0], &targets)?;
            Ok(l)
        })?,
    ));
    out.push(("sum", check_op(seed, &[(r, c)], |t, v| Ok(t.sum(v[0])))?));
    Ok(out)
}

fn desk_model(encoding: EncodingMode, seed: u64, train_special: bool) -> Model {
    let mut config = ModelConfig::desk();
    config.encoding = encoding;
    config.seed = seed;
    config.embedding.seed = seed;
    config.train_special_tokens = train_special;
    let provider = EmbeddingProvider::build(&config.embedding, &[]).unwrap();
    Model::init(config, provider, 3.0).unwrap()
}

fn random_seqs(rng: &mut ChaCha8Rng, n: usize, len: std::ops::Range<usize>, vocab: usize) -> Vec<LabeledSequence> {
    (0..n)
        .map(|i| {
            let l = rng.random_range(len.clone());
            let mut t = 0;
            let elapsed = (0..l)
                .map(|j| {
                    if j > 0 {
                        t += rng.random_range(0..5);
                    }
                    t
                })
                .collect();
            LabeledSequence {
                events: (0..l).map(|_| rng.random_range(0..vocab)).collect(),
                elapsed,
                label: (i % 2) as u8,
            }
        })
        .collect()
}

fn numeric_soundness() -> Verdict {
    let start = Instant::now();
    let mut worst_op = (0.0f64, "");
    let mut worst_model = 0.0f64;
    let encodings = [EncodingMode::None, EncodingMode::Positional, EncodingMode::Rtee, EncodingMode::Time2vec];
    for seed in 0..20u64 {
        match op_checks(seed) {
            Ok(errs) => {
                for (name, e) in errs {
                    if e > worst_op.0 || e.is_nan() {
                        worst_op = (e, name);
                    }
                }
            }
            Err(e) => return verdict(false, format!("op check failed to run: {e}")),
        }
        let enc = encodings[seed as usize % 4];
        let mut model = desk_model(enc, seed, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs = random_seqs(&mut rng, 3, 2..7, 10);
        let refs: Vec<&LabeledSequence> = seqs.iter().collect();
        let batch = model.assemble(&refs).unwrap();
        let mut store = std::mem::take(&mut model.params);
        let cfg = GradCheckConfig {
            eps: 1e-5,
            max_coords_per_param: Some(6),
            seed,
        };
        match grad_check(&mut store, &cfg, |s, g| model.loss(s, &batch, g, None)) {
            Ok(r) => worst_model = worst_model.max(r.max_rel_error),
            Err(e) => return verdict(false, format!("model check failed to run: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_op.0 < GRAD_TOL && worst_model < GRAD_TOL && elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "20 seeds; worst op error {:.2e} ({}), worst full-model error {:.2e}; {:.1}s (limit 60s)",
            worst_op.0,
            worst_op.1,
            worst_model,
            elapsed.as_secs_f64()
        ),
    )
}

// -------------------------------------------------------------- encodings

fn encoding_closed_forms() -> Verdict {
    let mut max_err = 0.0f64;
    for d in [2usize, 8, 32, 64] {
        let p = SinusoidalParams::new(d).unwrap();
        let values: Vec<f64> = (-1..200).map(f64::from).chain([1e4, 86_399.0, 1e6]).collect();
        for (enc, vals) in [(sinusoidal_encode(&values, &p), &values), (rtee_encode(&values, &p), &values)] {
            for (row, &v) in enc.chunks(d).zip(vals) {
                for i in 0..d / 2 {
                    let denom = 10_000f64.powf(2.0 * i as f64 / d as f64);
                    max_err = max_err.max((row[2 * i] - (v / denom).sin()).abs());
                    max_err = max_err.max((row[2 * i + 1] - (v / denom).cos()).abs());
                }
            }
        }
    }
    let p = SinusoidalParams::new(32).unwrap();
    let elapsed = [0.0, 1.0, 1.0, 2.0, 4.0, 5.0, 6.0];
    let enc = rtee_encode(&elapsed, &p);
    let rows: Vec<&[f64]> = enc.chunks(32).collect();
    let equal_rows = rows[1] == rows[2];
    let distinct_otherwise = (0..7).all(|i| (0..7).all(|j| elapsed[i] == elapsed[j] || rows[i] != rows[j]));
    verdict(
        max_err <= 1e-12 && equal_rows && distinct_otherwise,
        format!(
            "max deviation from the closed form {max_err:.1e} (limit 1e-12); elapsed [0,1,1,2,4,5,6]: equal-elapsed rows identical = {equal_rows}, others distinct = {distinct_otherwise}"
        ),
    )
}

// ------------------------------------------------------- mask/permutation

fn mask_and_permutation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut pad_err = 0.0f64;
    for (k, enc) in [EncodingMode::None, EncodingMode::Positional, EncodingMode::Rtee, EncodingMode::Time2vec]
        .into_iter()
        .enumerate()
    {
        let m = desk_model(enc, k as u64, false);
        let seqs = random_seqs(&mut rng, 6, 3..30, 12);
        for s in &seqs {
            let alone = m.forward(&m.assemble(&[s]).unwrap()).unwrap()[0];
            let batched = m.forward(&m.assemble(&seqs.iter().collect::<Vec<_>>()).unwrap()).unwrap();
            let i = seqs.iter().position(|x| std::ptr::eq(x, s)).unwrap();
            pad_err = pad_err.max((alone - batched[i]).abs());
        }
    }
    let mut perm_err = 0.0f64;
    let mut changed = 0;
    for seed in 0..10u64 {
        let none = desk_model(EncodingMode::None, seed, false);
        let pos = desk_model(EncodingMode::Positional, seed, false);
        let s = &random_seqs(&mut rng, 1, 12..20, 12)[0];
        let base_none = none.forward(&none.assemble(&[s]).unwrap()).unwrap()[0];
        let base_pos = pos.forward(&pos.assemble(&[s]).unwrap()).unwrap()[0];
        let mut any_change = false;
        for _ in 0..5 {
            let mut p = s.clone();
            p.events.shuffle(&mut rng);
            let z = none.forward(&none.assemble(&[&p]).unwrap()).unwrap()[0];
            perm_err = perm_err.max((z - base_none).abs());
            let z = pos.forward(&pos.assemble(&[&p]).unwrap()).unwrap()[0];
            any_change |= (z - base_pos).abs() > 1e-6;
        }
        changed += usize::from(any_change);
    }
    verdict(
        pad_err < 1e-9 && perm_err < 1e-6 && changed >= 9,
        format!(
            "padding deviation {pad_err:.1e} (limit 1e-9); permutation deviation without encoding {perm_err:.1e} (limit 1e-6); positional logit changed for {changed}/10 initialisations (need 9)"
        ),
    )
}

// ------------------------------------------------------------ experiments

/// Model and training budget of the transformer cells. Occurrence and
/// timing anomalies are learnt by the desk preset in a few epochs; order
/// anomalies sit on a long loss plateau that a wider model with a higher
/// peak rate leaves within budget.
fn experiment_setup(kind: AnomalyKind) -> (ModelConfig, TrainConfig) {
    match kind {
        AnomalyKind::Occurrence | AnomalyKind::Timing => (ModelConfig::desk(), TrainConfig::default()),
        AnomalyKind::Order => {
            let mut model = ModelConfig::desk();
            model.d_model = 64;
            model.embedding.dim = 64;
            model.ffn_dim = 128;
            let train = TrainConfig {
                epochs: 40,
                lr: 1e-3,
                ..TrainConfig::default()
            };
            (model, train)
        }
    }
}

fn write_corpus(dir: &Path, kind: AnomalyKind) -> InputSpec {
    // 2,000 sessions of 16–64 events, half anomalous, seed 7
    let spec = CorpusSpec::with_kind(kind, 7);
    let corpus = generate_corpus(&spec).unwrap();
    let (log, truth) = (dir.join("corpus.log"), dir.join("truth.jsonl"));
    std::fs::write(&log, corpus.lines.join("\n") + "\n").unwrap();
    write_jsonl(&truth, &corpus.truth).unwrap();
    InputSpec {
        format: DatasetFormat::Synth,
        path: log,
        labels: Some(truth),
        columns: None,
    }
}

fn matrix(input: InputSpec, kind: AnomalyKind, cells: Vec<Cell>) -> ExperimentMatrix {
    let (model, train) = experiment_setup(kind);
    ExperimentMatrix {
        input,
        parser: ParserConfig {
            masking_rules: default_masking_rules(),
            ..ParserConfig::default()
        },
        grouping: Default::default(),
        split: Default::default(),
        model,
        train,
        grid: Default::default(),
        cells,
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn f1(report: &MatrixReport, cell: &str) -> f64 {
    let row = report.row(cell).unwrap_or_else(|| panic!("no row {cell}"));
    if let Some(e) = &row.error {
        println!("      cell {cell} failed: {e}");
    }
    row.f1.unwrap_or(f64::NAN)
}

fn fmt_rows(report: &MatrixReport, cells: &[&str]) -> String {
    cells.iter().map(|c| format!("{c} {:.4}", f1(report, c))).collect::<Vec<_>>().join(", ")
}

struct Experiments {
    occurrence: Option<(MatrixReport, Duration)>,
    order: Option<MatrixReport>,
    timing: Option<MatrixReport>,
}

fn run_occurrence(root: &Path) -> (MatrixReport, Duration) {
    let dir = root.join("occurrence");
    std::fs::create_dir_all(&dir).unwrap();
    let start = Instant::now();
    let input = write_corpus(&dir, AnomalyKind::Occurrence);
    let timed = vec![
        Cell::transformer(EmbeddingMode::Random, EncodingMode::Rtee, 7),
        Cell::baseline(BaselineKind::Dt, 7),
    ];
    run_matrix(&matrix(input.clone(), AnomalyKind::Occurrence, timed), &dir.join("timed"), 1).unwrap();
    let elapsed = start.elapsed();
    let cells = vec![
        Cell::transformer(EmbeddingMode::Random, EncodingMode::Rtee, 7),
        Cell::baseline(BaselineKind::Dt, 7),
        Cell::transformer(EmbeddingMode::Zero, EncodingMode::Rtee, 7),
        Cell::transformer(EmbeddingMode::Zero, EncodingMode::Time2vec, 7),
    ];
    // the first two cells are up to date in `timed` and are re-read from there
    let report = run_matrix(&matrix(input, AnomalyKind::Occurrence, cells), &dir.join("timed"), jobs()).unwrap();
    (report, elapsed)
}

fn run_order(root: &Path) -> MatrixReport {
    let dir = root.join("order");
    std::fs::create_dir_all(&dir).unwrap();
    let input = write_corpus(&dir, AnomalyKind::Order);
    let cells = vec![
        Cell::transformer(EmbeddingMode::Random, EncodingMode::Positional, 7),
        Cell::transformer(EmbeddingMode::Random, EncodingMode::None, 7),
        Cell::baseline(BaselineKind::Knn, 7),
        Cell::baseline(BaselineKind::Dt, 7),
        Cell::baseline(BaselineKind::Mlp, 7),
    ];
    run_matrix(&matrix(input, AnomalyKind::Order, cells), &dir.join("matrix"), jobs()).unwrap()
}

fn run_timing(root: &Path) -> MatrixReport {
    let dir = root.join("timing");
    std::fs::create_dir_all(&dir).unwrap();
    let input = write_corpus(&dir, AnomalyKind::Timing);
    let cells = vec![
        Cell::transformer(EmbeddingMode::Random, EncodingMode::Rtee, 7),
        Cell::transformer(EmbeddingMode::Random, EncodingMode::Time2vec, 7),
        Cell::transformer(EmbeddingMode::Random, EncodingMode::Positional, 7),
        Cell::transformer(EmbeddingMode::Zero, EncodingMode::Rtee, 7),
        Cell::transformer(EmbeddingMode::Zero, EncodingMode::Time2vec, 7),
    ];
    run_matrix(&matrix(input, AnomalyKind::Timing, cells), &dir.join("matrix"), jobs()).unwrap()
}

fn occurrence_criterion(ex: &Experiments) -> Verdict {
    let (r, t) = ex.occurrence.as_ref().unwrap();
    let (tr, dt) = (f1(r, "random+rtee"), f1(r, "mcv+dt"));
    verdict(
        tr >= 0.95 && dt >= 0.95 && *t < Duration::from_secs(600),
        format!(
            "random+rtee F1 {tr:.4}, mcv+dt F1 {dt:.4} (need ≥ 0.95); corpus + parse + both models {:.0}s (limit 600s)",
            t.as_secs_f64()
        ),
    )
}

fn order_criterion(ex: &Experiments) -> Verdict {
    let r = ex.order.as_ref().unwrap();
    let pos = f1(r, "random+positional");
    let none = f1(r, "random+none");
    let base = ["mcv+knn", "mcv+dt", "mcv+mlp"].map(|c| f1(r, c));
    verdict(
        pos >= 0.90 && none <= 0.65 && base.iter().all(|&b| b <= 0.65),
        format!(
            "random+positional {pos:.4} (need ≥ 0.90); random+none {none:.4} (need ≤ 0.65); {} (need ≤ 0.65)",
            fmt_rows(r, &["mcv+knn", "mcv+dt", "mcv+mlp"])
        ),
    )
}

fn timing_criterion(ex: &Experiments) -> Verdict {
    let r = ex.timing.as_ref().unwrap();
    let (rtee, t2v, pos) = (f1(r, "random+rtee"), f1(r, "random+time2vec"), f1(r, "random+positional"));
    verdict(
        rtee.max(t2v) >= 0.90 && pos <= 0.65,
        format!("random+rtee {rtee:.4}, random+time2vec {t2v:.4} (either ≥ 0.90); random+positional {pos:.4} (need ≤ 0.65)"),
    )
}

fn encoding_only_criterion(ex: &Experiments) -> Verdict {
    let (occ, _) = ex.occurrence.as_ref().unwrap();
    let tim = ex.timing.as_ref().unwrap();
    let cells = ["zero+rtee", "zero+time2vec"];
    let occ_f1 = cells.map(|c| f1(occ, c));
    let tim_f1 = cells.map(|c| f1(tim, c));
    verdict(
        occ_f1.iter().all(|f| (f - CHANCE_F1).abs() <= 0.15) && tim_f1.iter().all(|&f| f >= 0.85),
        format!(
            "occurrence: {} (need within 0.15 of {CHANCE_F1}); timing: {} (need ≥ 0.85)",
            fmt_rows(occ, &cells),
            fmt_rows(tim, &cells)
        ),
    )
}

// ---------------------------------------------------------------- metrics

fn metrics_example() -> Verdict {
    let c = ConfusionCounts { tp: 9, fp: 1, tn: 87, fn_: 3 };
    let r = MetricsReport::new(&c);
    // the same counts through the label-level path
    let mut preds = vec![1u8; 9];
    let mut labels = vec![1u8; 9];
    preds.push(1);
    labels.push(0);
    preds.extend([0; 3]);
    labels.extend([1; 3]);
    preds.extend([0; 87]);
    labels.extend([0; 87]);
    let e = MetricsReport::evaluate(&preds, &labels).unwrap();
    let spec = 87.0 / 88.0;
    let f1 = 2.0 * 0.9 * 0.75 / (0.9 + 0.75);
    let ok = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let pass = r == e && ok(r.precision, 0.9) && ok(r.recall, 0.75) && ok(r.specificity, spec) && ok(r.f1, f1);
    verdict(
        pass,
        format!(
            "TP 9 FP 1 FN 3 TN 87 → P {:.9} R {:.9} Spec {:.9} F1 {:.9} (expected 0.9, 0.75, 87/88, 9/11)",
            r.precision, r.recall, r.specificity, r.f1
        ),
    )
}

// ------------------------------------------------------------ determinism

fn determinism(root: &Path) -> Verdict {
    let dir = root.join("determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let spec = CorpusSpec {
        n_sequences: 300,
        ..CorpusSpec::with_kind(AnomalyKind::Occurrence, 7)
    };
    let corpus = generate_corpus(&spec).unwrap();
    std::fs::write(dir.join("corpus.log"), corpus.lines.join("\n") + "\n").unwrap();
    write_jsonl(&dir.join("truth.jsonl"), &corpus.truth).unwrap();
    let cfg = r#"{
        "input": {"format": "synth", "path": "corpus.log", "labels": "truth.jsonl"},
        "parser": {"masking_rules": [{"pattern": "(^|\\s)\\d+\\b", "replacement": "${1}<*>"}]},
        "model": {"preset": "desk", "encoding": "time2vec", "dropout": 0.1},
        "train": {"epochs": 3},
        "baselines": ["knn", "dt", "mlp"]
    }"#;
    std::fs::write(dir.join("cfg.json"), cfg).unwrap();
    let cfg = PipelineConfig::load(&dir.join("cfg.json")).unwrap();
    let (a, b) = (dir.join("run_a"), dir.join("run_b"));
    run_pipeline(&cfg, &a).unwrap();
    run_pipeline(&cfg, &b).unwrap();
    let files = ["report.json", "report.txt", "preds.jsonl", "model.ckpt.json", "baseline_knn.json", "baseline_dt.json", "baseline_mlp.json"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("two fresh runs: {} files byte-identical", files.len())
        } else {
            format!("files differ: {differing:?}")
        },
    )
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY").unwrap_or_default();
    let want = |name: &str| only.is_empty() || only.split(',').any(|o| !o.is_empty() && name.contains(o));
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if !want(name) {
            return;
        }
        let v = f();
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((name, v));
    };

    run("numeric-soundness", &mut numeric_soundness);
    run("encoding-closed-forms", &mut encoding_closed_forms);
    run("mask-permutation", &mut mask_and_permutation);
    run("metrics-worked-example", &mut metrics_example);

    let needs = |names: &[&str]| names.iter().any(|n| want(n));
    let ex = Experiments {
        occurrence: needs(&["occurrence-corpus", "encoding-only"]).then(|| run_occurrence(root)),
        order: needs(&["order-corpus"]).then(|| run_order(root)),
        timing: needs(&["timing-corpus", "encoding-only"]).then(|| run_timing(root)),
    };
    run("occurrence-corpus", &mut || occurrence_criterion(&ex));
    run("order-corpus", &mut || order_criterion(&ex));
    run("timing-corpus", &mut || timing_criterion(&ex));
    run("encoding-only", &mut || encoding_only_criterion(&ex));
    run("determinism", &mut || determinism(root));

    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
