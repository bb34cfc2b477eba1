//! Synthetic log corpora with one known kind of anomaly each.
//!
//! Every sequence is a session: background events drawn from the normal
//! templates with the motif embedded contiguously, separated by gaps of
//! `base + U{0..=jitter}` seconds. Anomalous sessions are then perturbed:
//!
//! * occurrence: 1–3 error-template events are inserted (the pre-insertion
//!   length is shortened to match, so lengths and durations carry no signal);
//! * order: the motif is permuted; every such session is paired with a
//!   normal twin sharing its events and timestamps, so count vectors are
//!   identical across the classes;
//! * timing: the gaps of a contiguous span are multiplied by
//!   `timing_factor`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Occurrence,
    Order,
    Timing,
}

impl AnomalyKind {
    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::Occurrence => "occurrence",
            AnomalyKind::Order => "order",
            AnomalyKind::Timing => "timing",
        }
    }
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occurrence" => Ok(AnomalyKind::Occurrence),
            "order" => Ok(AnomalyKind::Order),
            "timing" => Ok(AnomalyKind::Timing),
            other => Err(Error::config(format!(
                "unknown anomaly kind `{other}` (expected occurrence|order|timing)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapModel {
    /// Minimum inter-arrival time in seconds.
    pub base: u32,
    /// Upper bound of the uniform integer jitter added to `base`.
    pub jitter: u32,
}

impl GapModel {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> i64 {
        i64::from(self.base) + i64::from(rng.random_range(0..=self.jitter))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub normal_templates: Vec<String>,
    pub error_templates: Vec<String>,
    /// Templates that always appear contiguously and in this order in
    /// normal sessions. They are not used as background events.
    pub motif: Vec<String>,
    pub n_sequences: usize,
    /// Inclusive event-count range of a session.
    pub length_range: [usize; 2],
    pub anomaly_ratio: f64,
    pub anomaly_kind: AnomalyKind,
    pub gap_model: GapModel,
    pub timing_factor: f64,
    /// Inclusive range for the number of gaps inflated by a timing anomaly.
    pub timing_span: [usize; 2],
    /// Epoch second of the first session.
    pub start_time: i64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        CorpusSpec {
            normal_templates: owned(&[
                "accept connection from <*>",
                "bind socket port <*>",
                "cache hit for key <*>",
                "dispatch request <*> to worker <*>",
                "evict entry <*>",
                "fetch page <*> took <*> ms",
                "gather metrics batch <*>",
                "heartbeat from node <*>",
                "index segment <*> merged",
                "journal flush <*> records",
                "lookup route <*>",
                "merge buffer <*> into <*>",
            ]),
            error_templates: owned(&[
                "panic in handler <*>",
                "disk quota exceeded on volume <*>",
                "checksum mismatch block <*>",
            ]),
            motif: owned(&[
                "open session <*>",
                "verify token for user <*>",
                "grant lease <*> seconds",
                "release session <*>",
            ]),
            n_sequences: 2000,
            length_range: [16, 64],
            anomaly_ratio: 0.5,
            anomaly_kind: AnomalyKind::Occurrence,
            gap_model: GapModel { base: 2, jitter: 2 },
            timing_factor: 10.0,
            timing_span: [4, 8],
            start_time: 1_600_000_000,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn with_kind(kind: AnomalyKind, seed: u64) -> Self {
        CorpusSpec {
            anomaly_kind: kind,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.length_range;
        if lo > hi {
            return Err(Error::config(format!("length range {lo}..{hi} is empty")));
        }
        if lo < self.motif.len() + 2 {
            return Err(Error::config(format!(
                "minimum length {lo} must be at least the motif length {} plus 2",
                self.motif.len()
            )));
        }
        if self.normal_templates.is_empty() {
            return Err(Error::config("at least one normal template is required"));
        }
        if !(self.anomaly_ratio > 0.0 && self.anomaly_ratio < 1.0) {
            return Err(Error::config(format!(
                "anomaly_ratio must lie in (0, 1), got {}",
                self.anomaly_ratio
            )));
        }
        if self.n_sequences == 0 {
            return Err(Error::config("n_sequences must be positive"));
        }
        let mut all: Vec<&String> = self
            .normal_templates
            .iter()
            .chain(&self.error_templates)
            .chain(&self.motif)
            .collect();
        all.sort();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("template texts must be distinct across all lists"));
        }
        match self.anomaly_kind {
            AnomalyKind::Occurrence if self.error_templates.is_empty() => {
                Err(Error::config("occurrence anomalies need error templates"))
            }
            AnomalyKind::Order if self.motif.len() < 3 => {
                Err(Error::config("order anomalies need a motif of at least 3 templates"))
            }
            AnomalyKind::Timing if !(self.timing_factor > 1.0) => Err(Error::config(format!(
                "timing_factor must exceed 1, got {}",
                self.timing_factor
            ))),
            AnomalyKind::Timing
                if self.timing_span[0] == 0
                    || self.timing_span[0] > self.timing_span[1]
                    || self.timing_span[1] >= lo =>
            {
                Err(Error::config(format!(
                    "timing span {:?} must be non-empty and shorter than the minimum length",
                    self.timing_span
                )))
            }
            _ => Ok(()),
        }
    }

    /// All template texts; a sequence's events index into this list
    /// (normal templates, then motif, then error templates).
    pub fn template_texts(&self) -> Vec<String> {
        self.normal_templates
            .iter()
            .chain(&self.motif)
            .chain(&self.error_templates)
            .cloned()
            .collect()
    }

    fn motif_ids(&self) -> Vec<usize> {
        let n = self.normal_templates.len();
        (n..n + self.motif.len()).collect()
    }

    fn error_ids(&self) -> Vec<usize> {
        let n = self.normal_templates.len() + self.motif.len();
        (n..n + self.error_templates.len()).collect()
    }
}

/// The `truth.jsonl` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_key: String,
    pub label: u8,
    /// `None` for normal sessions.
    pub kind: Option<AnomalyKind>,
    /// Order: motif event range. Timing: range of events whose preceding
    /// gap was inflated.
    pub span: Option<[usize; 2]>,
    /// Order corpora: the session with the same events and timestamps but
    /// the other label.
    pub twin: Option<String>,
}

/// One generated session before rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSequence {
    pub session_key: String,
    /// Indices into [`CorpusSpec::template_texts`].
    pub events: Vec<usize>,
    pub timestamps: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<SynthSequence>,
    pub truth: Vec<GroundTruth>,
    /// Rendered `<epoch_seconds> <session_key> <text>` lines, chronological.
    pub lines: Vec<String>,
}

/// Permutes the events in `span` by a non-identity permutation.
pub fn inject_order<R: Rng>(events: &mut [usize], span: Range<usize>, rng: &mut R) -> Result<()> {
    if span.end > events.len() || span.len() < 2 {
        return Err(Error::data(format!(
            "order injection needs a span of at least 2 events, got {span:?}"
        )));
    }
    let original = events[span.clone()].to_vec();
    if original.iter().all(|e| *e == original[0]) {
        return Err(Error::data("order injection needs at least two distinct events in the span"));
    }
    loop {
        events[span.clone()].shuffle(rng);
        if events[span.clone()] != original[..] {
            return Ok(());
        }
    }
}

/// Multiplies the gaps before events `span` by `factor` and re-accumulates
/// the timestamps.
pub fn inject_timing(timestamps: &mut [i64], span: Range<usize>, factor: f64) -> Result<()> {
    if span.is_empty() || span.start == 0 || span.end > timestamps.len() {
        return Err(Error::data(format!(
            "timing span {span:?} must be non-empty and lie within gaps 1..{}",
            timestamps.len()
        )));
    }
    if !(factor > 1.0) {
        return Err(Error::data(format!("timing factor must exceed 1, got {factor}")));
    }
    let gaps: Vec<i64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    for i in 1..timestamps.len() {
        let g = gaps[i - 1];
        let g = if span.contains(&i) {
            (g as f64 * factor).round() as i64
        } else {
            g
        };
        timestamps[i] = timestamps[i - 1] + g;
    }
    Ok(())
}

/// Inserts 1–3 error events at positions outside `protect`. Each inserted
/// event gets a fresh gap and every later event shifts by that gap.
/// Returns the number of insertions.
pub fn inject_occurrence<R: Rng>(
    events: &mut Vec<usize>,
    timestamps: &mut Vec<i64>,
    error_ids: &[usize],
    protect: Range<usize>,
    gaps: &GapModel,
    count: usize,
    rng: &mut R,
) -> Result<usize> {
    if error_ids.is_empty() {
        return Err(Error::data("no error templates to insert"));
    }
    if !(1..=3).contains(&count) {
        return Err(Error::data(format!("insertion count {count} outside 1..=3")));
    }
    let mut protect = protect;
    for _ in 0..count {
        // insertion points: before any event outside the protected run, or at the end
        let candidates: Vec<usize> = (1..=events.len())
            .filter(|p| *p <= protect.start || *p >= protect.end)
            .collect();
        let pos = candidates[rng.random_range(0..candidates.len())];
        let gap = gaps.draw(rng);
        let ts = timestamps[pos - 1] + gap;
        for t in timestamps.iter_mut().skip(pos) {
            *t += gap;
        }
        events.insert(pos, error_ids[rng.random_range(0..error_ids.len())]);
        timestamps.insert(pos, ts);
        if pos <= protect.start {
            protect = protect.start + 1..protect.end + 1;
        }
    }
    Ok(count)
}

fn fill_parameters<R: Rng>(text: &str, rng: &mut R) -> String {
    text.split(' ')
        .map(|tok| {
            if tok == "<*>" {
                rng.random_range(1..100_000u32).to_string()
            } else {
                tok.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

struct Base {
    events: Vec<usize>,
    timestamps: Vec<i64>,
    motif_at: usize,
}

fn base_sequence<R: Rng>(spec: &CorpusSpec, len: usize, start: i64, rng: &mut R) -> Base {
    let motif = spec.motif_ids();
    let n_bg = len - motif.len();
    let motif_at = rng.random_range(0..=n_bg);
    let mut events: Vec<usize> = (0..n_bg)
        .map(|_| rng.random_range(0..spec.normal_templates.len()))
        .collect();
    events.splice(motif_at..motif_at, motif.iter().copied());
    let mut timestamps = Vec::with_capacity(len);
    let mut t = start;
    for i in 0..len {
        if i > 0 {
            t += spec.gap_model.draw(rng);
        }
        timestamps.push(t);
    }
    Base {
        events,
        timestamps,
        motif_at,
    }
}

/// Generates the corpus; the same spec always yields the same corpus.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let n = spec.n_sequences;
    let n_anom = (spec.anomaly_ratio * n as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.length_range;
    let motif_len = spec.motif.len();
    let width = (n.to_string()).len();
    let key = |i: usize| format!("sess_{i:0width$}");
    // session start times are spread so sessions interleave in the stream
    let stride = i64::from(spec.gap_model.base.max(1)) * (lo as i64) / 4 + 1;

    let mut sequences = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut push = |events: Vec<usize>, timestamps: Vec<i64>, gt: GroundTruth| {
        sequences.push(SynthSequence {
            session_key: gt.session_key.clone(),
            events,
            timestamps,
        });
        truth.push(gt);
    };

    match spec.anomaly_kind {
        AnomalyKind::Order => {
            // twins first: each base session yields a normal and a permuted copy
            let n_pairs = n_anom.min(n - n_anom);
            let mut slots: Vec<usize> = (0..n).collect();
            slots.shuffle(&mut rng);
            let mut made = vec![None; n];
            for p in 0..n_pairs {
                let (a, b) = (slots[2 * p], slots[2 * p + 1]);
                let len = rng.random_range(lo..=hi);
                let start = spec.start_time + a.min(b) as i64 * stride;
                let base = base_sequence(spec, len, start, &mut rng);
                let span = base.motif_at..base.motif_at + motif_len;
                let mut permuted = base.events.clone();
                inject_order(&mut permuted, span.clone(), &mut rng)?;
                made[a] = Some((base.events, base.timestamps.clone(), 0u8, Some(span.clone()), Some(b)));
                made[b] = Some((permuted, base.timestamps, 1u8, Some(span), Some(a)));
            }
            let extra_anom = n_anom - n_pairs;
            let mut k = 0;
            for i in slots[2 * n_pairs..].iter().copied() {
                let len = rng.random_range(lo..=hi);
                let base = base_sequence(spec, len, spec.start_time + i as i64 * stride, &mut rng);
                let span = base.motif_at..base.motif_at + motif_len;
                if k < extra_anom {
                    let mut ev = base.events;
                    inject_order(&mut ev, span.clone(), &mut rng)?;
                    made[i] = Some((ev, base.timestamps, 1, Some(span), None));
                } else {
                    made[i] = Some((base.events, base.timestamps, 0, None, None));
                }
                k += 1;
            }
            for (i, m) in made.into_iter().enumerate() {
                let (events, timestamps, label, span, twin) = m.expect("every slot filled");
                push(
                    events,
                    timestamps,
                    GroundTruth {
                        session_key: key(i),
                        label,
                        kind: (label == 1).then_some(AnomalyKind::Order),
                        span: if label == 1 { span.map(|s| [s.start, s.end]) } else { None },
                        twin: twin.map(key),
                    },
                );
            }
        }
        kind => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut anomalous = vec![false; n];
            for &i in &order[..n_anom] {
                anomalous[i] = true;
            }
            for (i, &is_anom) in anomalous.iter().enumerate() {
                let len = rng.random_range(lo..=hi);
                let start = spec.start_time + i as i64 * stride;
                let mut gt = GroundTruth {
                    session_key: key(i),
                    label: u8::from(is_anom),
                    kind: is_anom.then_some(kind),
                    span: None,
                    twin: None,
                };
                if !is_anom {
                    let base = base_sequence(spec, len, start, &mut rng);
                    push(base.events, base.timestamps, gt);
                    continue;
                }
                match kind {
                    AnomalyKind::Occurrence => {
                        let count = rng.random_range(1..=3usize).min(len - motif_len - 1).max(1);
                        let base = base_sequence(spec, len - count, start, &mut rng);
                        let (mut ev, mut ts) = (base.events, base.timestamps);
                        let protect = base.motif_at..base.motif_at + motif_len;
                        inject_occurrence(&mut ev, &mut ts, &spec.error_ids(), protect, &spec.gap_model, count, &mut rng)?;
                        push(ev, ts, gt);
                    }
                    AnomalyKind::Timing => {
                        let base = base_sequence(spec, len, start, &mut rng);
                        let span_len = rng.random_range(spec.timing_span[0]..=spec.timing_span[1]);
                        let first = rng.random_range(1..=len - span_len);
                        let span = first..first + span_len;
                        let mut ts = base.timestamps;
                        inject_timing(&mut ts, span.clone(), spec.timing_factor)?;
                        gt.span = Some([span.start, span.end]);
                        push(base.events, ts, gt);
                    }
                    AnomalyKind::Order => unreachable!("handled above"),
                }
            }
        }
    }

    let texts = spec.template_texts();
    let mut stamped: Vec<(i64, usize, usize, String)> = Vec::new();
    for (si, s) in sequences.iter().enumerate() {
        for (ei, (&e, &t)) in s.events.iter().zip(&s.timestamps).enumerate() {
            let line = format!("{t} {} {}", s.session_key, fill_parameters(&texts[e], &mut rng));
            stamped.push((t, si, ei, line));
        }
    }
    stamped.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    Ok(Corpus {
        sequences,
        truth,
        lines: stamped.into_iter().map(|(_, _, _, l)| l).collect(),
    })
}
