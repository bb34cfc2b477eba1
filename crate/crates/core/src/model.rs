//! Transformer-encoder sequence classifier.
//!
//! Each sequence becomes `[<AGG>] + events + [<EOS>] + <PAD>…`. Token
//! vectors pass through a shared projection to `d_model`, the selected
//! encoding is added, a stack of pre-norm encoder blocks runs with padding
//! masked out, and a linear head reads the logit off the `<AGG>` position.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembler::LabeledSequence;
use crate::embeddings::{
    make_special_tokens, EmbeddingProvider, EmbeddingProviderConfig, EmbeddingRow,
};
use crate::encodings::{
    median_positive, sinusoidal_encode, ElapsedScaling, EncodingMode, SinusoidalParams,
    Time2VecParams, SPECIAL_ELAPSED,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::numeric::layers::{apply_layer_norm, init_layer_norm};
use crate::numeric::{
    sigmoid, AdamW, AttentionLayout, AttentionParams, LinearParams, OneCycleSchedule, ParamStore,
    Tape, Tensor, Var,
};

const SPECIAL_PARAM: &str = "embed.special";
const OMEGA: &str = "time2vec.omega";
const PHI: &str = "time2vec.phi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Longest accepted sequence, not counting `<AGG>` and `<EOS>`.
    pub max_seq_len: usize,
    pub embedding: EmbeddingProviderConfig,
    pub encoding: EncodingMode,
    pub elapsed_scaling: ElapsedScaling,
    pub threshold: f64,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    /// Train the `<AGG>`/`<EOS>`/`<PAD>` vectors instead of keeping them fixed.
    pub train_special_tokens: bool,
    /// Seed for parameter initialisation and the special-token vectors.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 8,
            ffn_dim: 2048,
            max_seq_len: 512,
            embedding: EmbeddingProviderConfig::default(),
            encoding: EncodingMode::None,
            elapsed_scaling: ElapsedScaling::Raw,
            threshold: 0.5,
            dropout: 0.0,
            layer_norm_eps: 1e-5,
            train_special_tokens: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width 64, two layers, 8 heads, 2048-wide feed-forward.
    pub fn full() -> Self {
        Self::default()
    }

    /// A small preset for quick runs: width 32, 4 heads, 64-wide feed-forward.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 4,
            ffn_dim: 64,
            embedding: EmbeddingProviderConfig {
                dim: 32,
                ..EmbeddingProviderConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.encoding != EncodingMode::None && self.d_model % 2 != 0 {
            return Err(Error::config("sinusoidal encodings need an even d_model"));
        }
        if self.ffn_dim == 0 || self.max_seq_len == 0 {
            return Err(Error::config("ffn_dim and max_seq_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::config("layer_norm_eps must be positive"));
        }
        self.embedding.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    pub optimizer: AdamW,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// Share of the training sequences held out for epoch selection.
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 5e-4,
            optimizer: AdamW::default(),
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            valid_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One assembled token position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Agg,
    Eos,
    Pad,
    /// Row of the batch's template table.
    Event(usize),
}

/// A batch laid out as `batch_size` rows of `seq_len` slots, stacked row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledBatch {
    pub batch_size: usize,
    /// Longest sequence in the batch plus 2.
    pub seq_len: usize,
    pub slots: Vec<Slot>,
    /// Template ids of the rows of `template_table`, ascending.
    pub template_ids: Vec<usize>,
    pub template_table: Vec<f64>,
    /// Time value per slot; −1 for special tokens.
    pub elapsed: Vec<f64>,
    /// False exactly on `<PAD>`.
    pub mask: Vec<bool>,
    pub labels: Vec<f64>,
}

pub fn assemble_input(
    sequences: &[&LabeledSequence],
    provider: &EmbeddingProvider,
    config: &ModelConfig,
) -> Result<AssembledBatch> {
    if sequences.is_empty() {
        return Err(Error::data("cannot assemble an empty batch"));
    }
    for (i, s) in sequences.iter().enumerate() {
        if s.len() > config.max_seq_len {
            return Err(Error::data(format!(
                "sequence {i} has {} events, above max_seq_len {}; re-window the input",
                s.len(),
                config.max_seq_len
            )));
        }
        if s.elapsed.len() != s.len() {
            return Err(Error::data(format!("sequence {i} has mismatched elapsed times")));
        }
    }
    let b = sequences.len();
    let l = sequences.iter().map(|s| s.len()).max().unwrap_or(0) + 2;
    let mut ids: Vec<usize> = sequences.iter().flat_map(|s| s.events.iter().copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    let local: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let dim = provider.dim();
    let mut table = Vec::with_capacity(ids.len() * dim);
    for &id in &ids {
        table.extend_from_slice(&provider.get(id)?);
    }
    let mut slots = Vec::with_capacity(b * l);
    let mut elapsed = Vec::with_capacity(b * l);
    let mut mask = Vec::with_capacity(b * l);
    for s in sequences {
        slots.push(Slot::Agg);
        elapsed.push(SPECIAL_ELAPSED);
        for (e, &t) in s.events.iter().zip(&s.elapsed) {
            slots.push(Slot::Event(local[e]));
            elapsed.push(config.elapsed_scaling.apply(t as f64));
        }
        slots.push(Slot::Eos);
        elapsed.push(SPECIAL_ELAPSED);
        mask.extend(std::iter::repeat_n(true, s.len() + 2));
        for _ in s.len() + 2..l {
            slots.push(Slot::Pad);
            elapsed.push(SPECIAL_ELAPSED);
            mask.push(false);
        }
    }
    Ok(AssembledBatch {
        batch_size: b,
        seq_len: l,
        slots,
        template_ids: ids,
        template_table: table,
        elapsed,
        mask,
        labels: sequences.iter().map(|s| f64::from(s.label)).collect(),
    })
}

struct Block {
    ln1: (String, String),
    attn: AttentionParams,
    ln2: (String, String),
    ffn1: LinearParams,
    ffn2: LinearParams,
}

impl Block {
    fn named(i: usize) -> Self {
        Block {
            ln1: (format!("layer{i}.ln1.gamma"), format!("layer{i}.ln1.beta")),
            attn: AttentionParams::named(&format!("layer{i}.attn")),
            ln2: (format!("layer{i}.ln2.gamma"), format!("layer{i}.ln2.beta")),
            ffn1: LinearParams::named(&format!("layer{i}.ffn1")),
            ffn2: LinearParams::named(&format!("layer{i}.ffn2")),
        }
    }
}

/// A classifier: configuration, parameters, fixed special-token vectors and
/// the template vectors it was built with.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// `[3 × d_emb]` rows `<AGG>`, `<EOS>`, `<PAD>` when they are not trained.
    pub special: Option<Tensor>,
    pub provider: EmbeddingProvider,
}

impl Model {
    /// Fresh parameters. `time_scale` sets the Time2Vec frequency range.
    pub fn init(config: ModelConfig, provider: EmbeddingProvider, time_scale: f64) -> Result<Self> {
        config.validate()?;
        if provider.dim() != config.embedding.dim {
            return Err(Error::config(format!(
                "provider dimension {} differs from configured {}",
                provider.dim(),
                config.embedding.dim
            )));
        }
        let d = config.d_model;
        let d_emb = provider.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let sp = make_special_tokens(config.embedding.seed ^ config.seed, d_emb)?;
        let special_data: Vec<f64> = [sp.agg_vec, sp.eos_vec, sp.pad_vec].concat();
        let special_tensor = Tensor::new(vec![3, d_emb], special_data)?;
        let special = if config.train_special_tokens {
            params.insert(SPECIAL_PARAM, special_tensor)?;
            None
        } else {
            Some(special_tensor)
        };
        LinearParams::init(&mut params, "embed.fc", d_emb, d, &mut rng)?;
        if config.encoding == EncodingMode::Time2vec {
            let t2v = Time2VecParams::init(d, time_scale, &mut rng);
            params.insert(OMEGA, Tensor::new(vec![d], t2v.omega)?)?;
            params.insert(PHI, Tensor::new(vec![d], t2v.phi)?)?;
        }
        for i in 0..config.n_layers {
            init_layer_norm(&mut params, &format!("layer{i}.ln1"), d)?;
            AttentionParams::init(&mut params, &format!("layer{i}.attn"), d, &mut rng)?;
            init_layer_norm(&mut params, &format!("layer{i}.ln2"), d)?;
            LinearParams::init(&mut params, &format!("layer{i}.ffn1"), d, config.ffn_dim, &mut rng)?;
            LinearParams::init(&mut params, &format!("layer{i}.ffn2"), config.ffn_dim, d, &mut rng)?;
        }
        init_layer_norm(&mut params, "final_norm", d)?;
        LinearParams::init(&mut params, "head", d, 1, &mut rng)?;
        Ok(Model {
            config,
            params,
            special,
            provider,
        })
    }

    pub fn assemble(&self, sequences: &[&LabeledSequence]) -> Result<AssembledBatch> {
        assemble_input(sequences, &self.provider, &self.config)
    }

    /// Projected token vectors plus encodings: `[B·L × d_model]`.
    pub fn embed(&self, tape: &mut Tape, params: &ParamStore, batch: &AssembledBatch) -> Result<Var> {
        let d_emb = self.provider.dim();
        let special = match &self.special {
            Some(t) => tape.constant(3, d_emb, t.data.clone())?,
            None => tape.param(params, SPECIAL_PARAM)?,
        };
        let fc = LinearParams::named("embed.fc");
        let w = tape.param(params, &fc.weight)?;
        let bias = tape.param(params, &fc.bias)?;
        let special_proj = tape.matmul(special, w)?;
        let special_index = batch
            .slots
            .iter()
            .map(|s| match s {
                Slot::Agg => Some(0),
                Slot::Eos => Some(1),
                Slot::Pad => Some(2),
                Slot::Event(_) => None,
            })
            .collect();
        let mut x = tape.gather_rows(special_proj, special_index)?;
        if !batch.template_ids.is_empty() {
            let table = tape.constant(batch.template_ids.len(), d_emb, batch.template_table.clone())?;
            let proj = tape.matmul(table, w)?;
            let index = batch
                .slots
                .iter()
                .map(|s| match s {
                    Slot::Event(i) => Some(*i),
                    _ => None,
                })
                .collect();
            let events = tape.gather_rows(proj, index)?;
            x = tape.add(x, events)?;
        }
        x = tape.add_bias(x, bias)?;
        let d = self.config.d_model;
        let rows = batch.slots.len();
        let enc = match self.config.encoding {
            EncodingMode::None => return Ok(x),
            EncodingMode::Positional => {
                let pos: Vec<f64> = (0..rows).map(|r| (r % batch.seq_len) as f64).collect();
                tape.constant(rows, d, sinusoidal_encode(&pos, &SinusoidalParams::new(d)?))?
            }
            EncodingMode::Rtee => {
                tape.constant(rows, d, sinusoidal_encode(&batch.elapsed, &SinusoidalParams::new(d)?))?
            }
            EncodingMode::Time2vec => {
                let om = tape.param(params, OMEGA)?;
                let ph = tape.param(params, PHI)?;
                tape.time2vec(&batch.elapsed, om, ph)?
            }
        };
        tape.add(x, enc)
    }

    /// Logits `[B × 1]`. Dropout is applied only when `rng` is given.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        batch: &AssembledBatch,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let layout = AttentionLayout::new(batch.batch_size, batch.seq_len, batch.mask.clone())?;
        let mut x = self.embed(tape, params, batch)?;
        for i in 0..cfg.n_layers {
            let blk = Block::named(i);
            let h = apply_layer_norm(tape, params, x, (&blk.ln1.0, &blk.ln1.1), cfg.layer_norm_eps)?;
            let mut a = blk.attn.apply(tape, params, h, cfg.n_heads, &layout)?;
            if let Some(r) = rng.as_deref_mut() {
                a = tape.dropout(a, cfg.dropout, r);
            }
            x = tape.add(x, a)?;
            let h = apply_layer_norm(tape, params, x, (&blk.ln2.0, &blk.ln2.1), cfg.layer_norm_eps)?;
            let h = blk.ffn1.apply(tape, params, h)?;
            let h = tape.relu(h);
            let mut f = blk.ffn2.apply(tape, params, h)?;
            if let Some(r) = rng.as_deref_mut() {
                f = tape.dropout(f, cfg.dropout, r);
            }
            x = tape.add(x, f)?;
            if tape.value(x).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activation after encoder layer {i}")));
            }
        }
        let agg = tape.gather_rows(x, (0..batch.batch_size).map(|b| Some(b * batch.seq_len)).collect())?;
        let z = apply_layer_norm(tape, params, agg, ("final_norm.gamma", "final_norm.beta"), cfg.layer_norm_eps)?;
        let logits = LinearParams::named("head").apply(tape, params, z)?;
        if tape.value(logits).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier logit".into()));
        }
        Ok(logits)
    }

    /// Mean BCE of a batch under `params`, with gradients accumulated into
    /// `params` when `with_grad` is set.
    pub fn loss(
        &self,
        params: &mut ParamStore,
        batch: &AssembledBatch,
        with_grad: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let logits = self.forward_with(&mut tape, params, batch, rng)?;
        let loss = tape.bce_with_logits(logits, &batch.labels)?;
        if with_grad {
            tape.backward_into(loss, params)?;
        }
        Ok(tape.scalar(loss))
    }

    pub fn forward(&self, batch: &AssembledBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let logits = self.forward_with(&mut tape, &self.params, batch, None)?;
        Ok(tape.value(logits).to_vec())
    }

    /// Logits for arbitrarily many sequences, evaluated in length-sorted
    /// batches. Results do not depend on the batching.
    pub fn logits(&self, sequences: &[LabeledSequence], batch_size: usize) -> Result<Vec<f64>> {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        order.sort_by_key(|&i| (sequences[i].len(), i));
        let mut out = vec![0.0; sequences.len()];
        for chunk in order.chunks(batch_size.max(1)) {
            let seqs: Vec<&LabeledSequence> = chunk.iter().map(|&i| &sequences[i]).collect();
            let batch = self.assemble(&seqs)?;
            for (&i, z) in chunk.iter().zip(self.forward(&batch)?) {
                out[i] = z;
            }
        }
        Ok(out)
    }

    pub fn probabilities(&self, sequences: &[LabeledSequence], batch_size: usize) -> Result<Vec<f64>> {
        Ok(self.logits(sequences, batch_size)?.into_iter().map(sigmoid).collect())
    }

    pub fn predict(&self, sequences: &[LabeledSequence], threshold: f64) -> Result<Vec<u8>> {
        Ok(self
            .logits(sequences, 64)?
            .into_iter()
            .map(|z| label_from_logit(z, threshold))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buffers = BTreeMap::new();
        if let Some(t) = &self.special {
            buffers.insert(SPECIAL_PARAM.to_string(), t.clone());
        }
        let ckpt = Checkpoint {
            config: self.config.clone(),
            params: self.params.to_map(),
            buffers,
            embeddings: self
                .provider
                .rows()
                .map(|(template_id, v)| EmbeddingRow {
                    template_id,
                    vector: v.to_vec(),
                })
                .collect(),
        };
        crate::jsonl::write_json(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = crate::jsonl::read_json(path)?;
        ckpt.config.validate()?;
        let rows = ckpt.embeddings.into_iter().map(|r| (r.template_id, r.vector)).collect();
        let provider = EmbeddingProvider::from_rows(&ckpt.config.embedding, rows)?;
        let mut buffers = ckpt.buffers;
        let special = buffers.remove(SPECIAL_PARAM);
        if special.is_none() && !ckpt.params.contains_key(SPECIAL_PARAM) {
            return Err(Error::data("checkpoint has no special-token vectors"));
        }
        Ok(Model {
            config: ckpt.config,
            params: ParamStore::from_map(ckpt.params)?,
            special,
            provider,
        })
    }
}

/// The `model.ckpt.json` document.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
    #[serde(default)]
    buffers: BTreeMap<String, Tensor>,
    #[serde(default)]
    embeddings: Vec<EmbeddingRow>,
}

/// 1 iff `σ(z) ≥ threshold`.
pub fn label_from_logit(z: f64, threshold: f64) -> u8 {
    u8::from(sigmoid(z) >= threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub valid_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Median positive elapsed value of the training set (after scaling), used
/// as the Time2Vec time scale.
pub fn time_scale(sequences: &[LabeledSequence], scaling: ElapsedScaling) -> f64 {
    median_positive(
        sequences
            .iter()
            .flat_map(|s| s.elapsed.iter().map(move |&t| scaling.apply(t as f64))),
    )
    .unwrap_or(1.0)
}

/// Trains from fresh parameters and returns the epoch with the best
/// validation F1 (the earliest one on ties).
pub fn train(
    config: &ModelConfig,
    tc: &TrainConfig,
    provider: EmbeddingProvider,
    train_set: &[LabeledSequence],
    valid_set: &[LabeledSequence],
) -> Result<(Model, History)> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::data("training and validation sets must both be non-empty"));
    }
    let positives = train_set.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::data(
            "training set contains a single class; the classifier would be degenerate",
        ));
    }
    if tc.epochs == 0 || tc.batch_size == 0 {
        return Err(Error::config("epochs and batch_size must be positive"));
    }
    let mut model = Model::init(config.clone(), provider, time_scale(train_set, config.elapsed_scaling))?;
    let steps_per_epoch = train_set.len().div_ceil(tc.batch_size);
    let schedule = OneCycleSchedule {
        max_lr: tc.lr,
        total_steps: (tc.epochs * steps_per_epoch).max(2),
        pct_start: tc.pct_start,
        div_factor: tc.div_factor,
        final_div_factor: tc.final_div_factor,
    };
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(1));
    let use_dropout = config.dropout > 0.0;
    let valid_labels: Vec<u8> = valid_set.iter().map(|s| s.label).collect();
    let mut history = History::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let mut lr = schedule.lr(0)?;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let seqs: Vec<&LabeledSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = model.assemble(&seqs)?;
            let mut params = std::mem::take(&mut model.params);
            params.zero_grad();
            let rng_arg = if use_dropout { Some(&mut dropout_rng) } else { None };
            let loss = model.loss(&mut params, &batch, true, rng_arg);
            let loss = match loss {
                Ok(l) => l,
                Err(e) => {
                    model.params = params;
                    return Err(e);
                }
            };
            lr = schedule.lr(step.min(schedule.total_steps - 1))?;
            tc.optimizer.step(&mut params, lr)?;
            model.params = params;
            total += loss * chunk.len() as f64;
            step += 1;
        }
        let loss = total / train_set.len() as f64;
        let preds = model.predict(valid_set, config.threshold)?;
        let valid_f1 = MetricsReport::evaluate(&preds, &valid_labels)?.f1;
        log::info!("epoch {epoch}: loss {loss:.5} valid F1 {valid_f1:.4}");
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            valid_f1,
            lr,
        });
        if best.as_ref().is_none_or(|(f, _)| valid_f1 > *f) {
            history.best_epoch = epoch;
            best = Some((valid_f1, model.params.snapshot()));
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

/// Splits `sequences` into training and validation parts by a seeded
/// shuffle, keeping at least one sequence of each.
pub fn holdout(sequences: &[LabeledSequence], fraction: f64, seed: u64) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>)> {
    if sequences.len() < 2 {
        return Err(Error::data("need at least 2 sequences to hold out a validation set"));
    }
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = ((fraction * sequences.len() as f64).round() as usize).clamp(1, sequences.len() - 1);
    let valid = order[..n_valid].iter().map(|&i| sequences[i].clone()).collect();
    let train = order[n_valid..].iter().map(|&i| sequences[i].clone()).collect();
    Ok((train, valid))
}

/// Holds out a validation part of `sequences` and trains on the rest.
pub fn fit(
    config: &ModelConfig,
    tc: &TrainConfig,
    provider: EmbeddingProvider,
    sequences: &[LabeledSequence],
) -> Result<(Model, History)> {
    let (train_set, valid_set) = holdout(sequences, tc.valid_fraction, tc.seed ^ 0x5eed)?;
    train(config, tc, provider, &train_set, &valid_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EmbeddingMode;
    use crate::numeric::{grad_check, GradCheckConfig};

    fn seq(events: &[usize], label: u8) -> LabeledSequence {
        LabeledSequence {
            events: events.to_vec(),
            elapsed: (0..events.len() as i64).map(|i| i * 2).collect(),
            label,
        }
    }

    fn tiny(encoding: EncodingMode, seed: u64) -> Model {
        let config = ModelConfig {
            d_model: 8,
            n_heads: 2,
            ffn_dim: 12,
            n_layers: 2,
            encoding,
            seed,
            embedding: EmbeddingProviderConfig {
                mode: EmbeddingMode::Random,
                dim: 6,
                seed,
                path: None,
            },
            ..ModelConfig::default()
        };
        let provider = EmbeddingProvider::build(&config.embedding, &[]).unwrap();
        Model::init(config, provider, 2.0).unwrap()
    }

    #[test]
    fn assembly_shapes() {
        let m = tiny(EncodingMode::None, 0);
        let a = seq(&[1, 2, 3], 0);
        let b = m.assemble(&[&a]).unwrap();
        assert_eq!(b.seq_len, 5);
        assert!(b.mask.iter().all(|&x| x));
        assert_eq!(b.slots[0], Slot::Agg);
        assert_eq!(b.slots[4], Slot::Eos);

        let c = seq(&[1, 2, 3, 4, 5], 1);
        let b = m.assemble(&[&a, &c]).unwrap();
        assert_eq!(b.seq_len, 7);
        assert_eq!(&b.mask[..7], &[true, true, true, true, true, false, false]);
        assert_eq!(&b.slots[5..7], &[Slot::Pad, Slot::Pad]);
        assert_eq!(b.elapsed[6], SPECIAL_ELAPSED);
        for row in 0..2 {
            let r = &b.slots[row * 7..(row + 1) * 7];
            assert_eq!(r[0], Slot::Agg);
            assert_eq!(r.iter().filter(|s| **s == Slot::Eos).count(), 1);
        }
    }

    #[test]
    fn overlong_and_unknown_sequences_rejected() {
        let mut m = tiny(EncodingMode::None, 0);
        m.config.max_seq_len = 2;
        let err = m.assemble(&[&seq(&[1, 2, 3], 0)]).unwrap_err().to_string();
        assert!(err.contains("re-window"), "{err}");
        let hashed = EmbeddingProviderConfig {
            mode: EmbeddingMode::Hashed,
            dim: 6,
            seed: 0,
            path: None,
        };
        m.config.max_seq_len = 10;
        m.provider = EmbeddingProvider::build(&hashed, &[]).unwrap();
        assert!(m.assemble(&[&seq(&[1], 0)]).is_err());
    }

    #[test]
    fn rtee_pad_row_carries_encoding_of_minus_one() {
        let plain = tiny(EncodingMode::None, 3);
        let mut rtee = plain.clone();
        rtee.config.encoding = EncodingMode::Rtee;
        let a = seq(&[1], 0);
        let c = seq(&[1, 2, 3], 0);
        let batch = plain.assemble(&[&a, &c]).unwrap();
        let rows = |m: &Model| {
            let mut t = Tape::new();
            let v = m.embed(&mut t, &m.params, &batch).unwrap();
            t.value(v).to_vec()
        };
        let (x0, x1) = (rows(&plain), rows(&rtee));
        let want = sinusoidal_encode(&[-1.0], &SinusoidalParams::new(8).unwrap());
        // row 0 of the batch: AGG, event, EOS, PAD, PAD
        for pad in [3, 4] {
            for j in 0..8 {
                let diff = x1[pad * 8 + j] - x0[pad * 8 + j];
                assert!((diff - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_head_gives_zero_logit() {
        let mut m = tiny(EncodingMode::Positional, 1);
        for name in ["head.weight", "head.bias"] {
            m.params.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let a = seq(&[4, 5, 6], 1);
        let b = m.assemble(&[&a]).unwrap();
        assert_eq!(m.forward(&b).unwrap(), vec![0.0]);
    }

    #[test]
    fn padding_and_batch_composition_do_not_change_logits() {
        for enc in [EncodingMode::None, EncodingMode::Positional, EncodingMode::Rtee, EncodingMode::Time2vec] {
            let m = tiny(enc, 5);
            let a = seq(&[1, 2, 3], 0);
            let alone = m.forward(&m.assemble(&[&a]).unwrap()).unwrap()[0];
            let long = seq(&(0..7).collect::<Vec<_>>(), 0);
            let padded = m.forward(&m.assemble(&[&a, &long]).unwrap()).unwrap()[0];
            assert!((alone - padded).abs() < 1e-9, "{enc:?}: {alone} vs {padded}");
        }
    }

    #[test]
    fn unpositioned_model_is_permutation_invariant() {
        let m = tiny(EncodingMode::None, 7);
        let a = seq(&[1, 2, 3, 4, 5], 0);
        let mut p = a.clone();
        p.events = vec![5, 3, 1, 4, 2];
        let za = m.forward(&m.assemble(&[&a]).unwrap()).unwrap()[0];
        let zp = m.forward(&m.assemble(&[&p]).unwrap()).unwrap()[0];
        assert!((za - zp).abs() < 1e-6);
        let m = tiny(EncodingMode::Positional, 7);
        let za = m.forward(&m.assemble(&[&a]).unwrap()).unwrap()[0];
        let zp = m.forward(&m.assemble(&[&p]).unwrap()).unwrap()[0];
        assert!((za - zp).abs() > 1e-6);
    }

    #[test]
    fn heads_must_divide_width() {
        let config = ModelConfig {
            d_model: 64,
            n_heads: 12,
            ..ModelConfig::default()
        };
        assert!(matches!(config.validate(), Err(Error::Config(_))));
        assert!(ModelConfig::full().validate().is_ok());
        assert!(ModelConfig::desk().validate().is_ok());
    }

    #[test]
    fn gradient_check_on_six_events() {
        for enc in [EncodingMode::Time2vec, EncodingMode::Positional] {
            let mut m = tiny(enc, 11);
            m.config.train_special_tokens = true;
            let m = Model::init(m.config.clone(), m.provider.clone(), 3.0).unwrap();
            let a = seq(&[0, 1, 2, 1, 0, 3], 1);
            let b = seq(&[2, 2, 3], 0);
            let batch = m.assemble(&[&a, &b]).unwrap();
            let mut store = m.params.clone();
            let report = grad_check(&mut store, &GradCheckConfig::default(), |s, g| {
                m.loss(s, &batch, g, None)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{enc:?}: {report:?}");
        }
    }

    #[test]
    fn predict_threshold_rule() {
        assert_eq!(label_from_logit(0.0, 0.5), 1);
        assert_eq!(label_from_logit(-30.0, 0.5), 0);
        assert_eq!(label_from_logit(-30.0, 0.0), 1);
    }

    fn toy_set() -> Vec<LabeledSequence> {
        (0..50)
            .map(|i| {
                let t = i % 2;
                seq(&[t, t, t, t], t as u8)
            })
            .collect()
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            ffn_dim: 16,
            embedding: EmbeddingProviderConfig {
                dim: 8,
                ..EmbeddingProviderConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = toy_set();
        let config = toy_config();
        let tc = TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let provider = EmbeddingProvider::build(&config.embedding, &[]).unwrap();
        let (model, history) = train(&config, &tc, provider, &data, &data).unwrap();
        assert_eq!(history.epochs.len(), 10);
        let preds = model.predict(&data, 0.5).unwrap();
        let labels: Vec<u8> = data.iter().map(|s| s.label).collect();
        assert_eq!(MetricsReport::evaluate(&preds, &labels).unwrap().f1, 1.0);
    }

    #[test]
    fn zero_learning_rate_changes_nothing_and_runs_are_deterministic() {
        let data = toy_set();
        let config = toy_config();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let provider = EmbeddingProvider::build(&config.embedding, &[]).unwrap();
        let fresh = Model::init(config.clone(), provider.clone(), time_scale(&data, ElapsedScaling::Raw)).unwrap();
        let (model, history) = train(&config, &tc, provider.clone(), &data, &data).unwrap();
        assert_eq!(model.params.to_map(), fresh.params.to_map());
        let losses: Vec<f64> = history.epochs.iter().map(|e| e.loss).collect();
        assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{losses:?}");

        let tc = TrainConfig { lr: 1e-2, ..tc };
        let (_, h1) = train(&config, &tc, provider.clone(), &data, &data).unwrap();
        let (_, h2) = train(&config, &tc, provider, &data, &data).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn single_class_training_rejected() {
        let data: Vec<LabeledSequence> = (0..4).map(|_| seq(&[1, 2], 0)).collect();
        let config = toy_config();
        let provider = EmbeddingProvider::build(&config.embedding, &[]).unwrap();
        let err = train(&config, &TrainConfig::default(), provider, &data, &data).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let m = tiny(EncodingMode::Time2vec, 9);
        let data = vec![seq(&[1, 2, 3], 0), seq(&[4, 4], 1)];
        // materialise rows for the ids in use so they are stored
        let templates: Vec<crate::parser::Template> = (0..5)
            .map(|i| crate::parser::Template {
                template_id: i,
                tokens: vec!["t".into()],
            })
            .collect();
        let m = Model {
            provider: EmbeddingProvider::build(&m.config.embedding, &templates).unwrap(),
            ..m
        };
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(m.logits(&data, 4).unwrap(), back.logits(&data, 4).unwrap());
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(v["params"]["head.weight"]["shape"].is_array());
        assert!(v["params"]["head.weight"]["data"].is_array());
    }
}
