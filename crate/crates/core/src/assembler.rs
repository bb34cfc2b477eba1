//! From parsed events to labeled sequences: session grouping, variable and
//! fixed windows, elapsed times and train/test splits.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::Event;

/// The `sequences.jsonl` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub events: Vec<usize>,
    pub elapsed: Vec<i64>,
    pub label: u8,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::data("sequence has no events"));
        }
        if self.elapsed.len() != self.events.len() {
            return Err(Error::data(format!(
                "{} events but {} elapsed values",
                self.events.len(),
                self.elapsed.len()
            )));
        }
        if self.elapsed[0] != 0 {
            return Err(Error::data("elapsed time must start at 0"));
        }
        if self.elapsed.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::data("elapsed times must be non-decreasing"));
        }
        if self.label > 1 {
            return Err(Error::data(format!("label {} is not 0 or 1", self.label)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub min_len: usize,
    pub max_len: usize,
    pub step: usize,
    pub seed: u64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            min_len: 128,
            max_len: 512,
            step: 64,
            seed: 0,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config(format!(
                "window lengths need 0 < min_len ≤ max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if self.step == 0 {
            return Err(Error::config("window step must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SplitMode {
    #[default]
    #[serde(rename = "chrono", alias = "chronological")]
    Chronological,
    #[serde(rename = "shuffle", alias = "shuffled_sessions")]
    ShuffledSessions,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chrono" | "chronological" => Ok(SplitMode::Chronological),
            "shuffle" | "shuffled_sessions" => Ok(SplitMode::ShuffledSessions),
            other => Err(Error::config(format!(
                "unknown split `{other}` (expected chrono|shuffle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            mode: SplitMode::Chronological,
            seed: 0,
        }
    }
}

/// Seconds since the first timestamp. A timestamp earlier than its
/// predecessor is clamped to the running maximum (with a warning).
pub fn compute_elapsed(timestamps: &[i64]) -> Result<Vec<i64>> {
    let first = *timestamps
        .first()
        .ok_or_else(|| Error::data("cannot compute elapsed times of an empty sequence"))?;
    let mut running = first;
    let mut clamped = 0usize;
    let out = timestamps
        .iter()
        .map(|&t| {
            if t < running {
                clamped += 1;
            } else {
                running = t;
            }
            running - first
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} out-of-order timestamps clamped to the running maximum");
    }
    Ok(out)
}

/// 1 iff any event is anomalous; every event must carry a label.
pub fn label_sequence(labels: &[Option<u8>]) -> Result<u8> {
    let mut out = 0;
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(0) => {}
            Some(_) => out = 1,
            None => return Err(Error::data(format!("event {i} of the window has no label"))),
        }
    }
    Ok(out)
}

fn window(events: &[Event]) -> Result<LabeledSequence> {
    let ts: Vec<i64> = events.iter().map(|e| e.timestamp).collect();
    let labels: Vec<Option<u8>> = events.iter().map(|e| e.label).collect();
    let label = label_sequence(&labels).map_err(|_| {
        let missing = events.iter().find(|e| e.label.is_none()).expect("some unlabeled");
        Error::data(format!("line {} has no label", missing.line_no))
    })?;
    Ok(LabeledSequence {
        events: events.iter().map(|e| e.template_id).collect(),
        elapsed: compute_elapsed(&ts)?,
        label,
    })
}

/// One sequence per session key, in order of each session's first event.
/// With `session_labels`, a session's label comes from the map; otherwise
/// it is derived from its event labels.
pub fn group_by_session(
    events: &[Event],
    session_labels: Option<&HashMap<String, u8>>,
) -> Result<Vec<LabeledSequence>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<Event>> = HashMap::new();
    for e in events {
        let key = e
            .session_key
            .as_deref()
            .ok_or_else(|| Error::data(format!("line {} has no session key", e.line_no)))?;
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(e.clone());
    }
    order
        .into_iter()
        .map(|key| {
            let group = &groups[key];
            match session_labels.and_then(|m| m.get(key)) {
                Some(&label) => {
                    let ts: Vec<i64> = group.iter().map(|e| e.timestamp).collect();
                    Ok(LabeledSequence {
                        events: group.iter().map(|e| e.template_id).collect(),
                        elapsed: compute_elapsed(&ts)?,
                        label: u8::from(label != 0),
                    })
                }
                None => window(group),
            }
        })
        .collect()
}

/// Windows starting at 0, step, 2·step, … while `start + min_len` fits.
/// Each window's length is drawn uniformly from `[min_len, max_len]` by a
/// generator seeded with `seed ⊕ start`, then clipped to the stream end.
pub fn make_variable_windows(events: &[Event], spec: &WindowSpec) -> Result<Vec<LabeledSequence>> {
    spec.validate()?;
    if events.len() < spec.min_len {
        log::warn!(
            "stream of {} events is shorter than the minimum window length {}; no windows",
            events.len(),
            spec.min_len
        );
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + spec.min_len <= events.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ start as u64);
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let end = (start + len).min(events.len());
        if end - start >= spec.min_len {
            out.push(window(&events[start..end])?);
        }
        start += spec.step;
    }
    Ok(out)
}

/// Windows of exactly `size` events at starts 0, step, …; if the last full
/// window stops short of the stream end, one final partial window (at the
/// next start) covers the remaining events.
pub fn make_fixed_windows(events: &[Event], size: usize, step: usize) -> Result<Vec<LabeledSequence>> {
    if size == 0 || step == 0 {
        return Err(Error::config("fixed windows need size ≥ 1 and step ≥ 1"));
    }
    let n = events.len();
    let mut out = Vec::new();
    let mut start = 0;
    let mut covered = 0;
    while start + size <= n {
        out.push(window(&events[start..start + size])?);
        covered = start + size;
        start += step;
    }
    if covered < n && start < n {
        out.push(window(&events[start..])?);
    }
    Ok(out)
}

/// Chronological mode keeps the input order; shuffled mode applies a seeded
/// permutation first. The training part has `⌈fraction·N⌉` items, kept
/// within `[1, N − 1]` so both parts are non-empty.
pub fn split_train_test<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 2 {
        return Err(Error::data(format!("need at least 2 sequences to split, got {n}")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    // guard against 0.7·10 = 7.000000000000001
    let n_train = ((spec.train_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    if spec.mode == SplitMode::ShuffledSessions {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// How the event stream is cut into sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grouping {
    Session,
    Variable(WindowSpec),
    Fixed { size: usize, step: usize },
}

impl Default for Grouping {
    fn default() -> Self {
        Grouping::Session
    }
}

pub fn assemble(events: &[Event], grouping: &Grouping) -> Result<Vec<LabeledSequence>> {
    match grouping {
        Grouping::Session => group_by_session(events, None),
        Grouping::Variable(spec) => make_variable_windows(events, spec),
        Grouping::Fixed { size, step } => make_fixed_windows(events, *size, *step),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(n: usize) -> Vec<Event> {
        (0..n)
            .map(|i| Event {
                line_no: i,
                timestamp: 1000 + (i as i64) / 3,
                template_id: i % 7,
                label: Some(u8::from(i % 50 == 49)),
                session_key: None,
            })
            .collect()
    }

    fn keyed(keys: &[&str], labels: &[u8]) -> Vec<Event> {
        keys.iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (k, l))| Event {
                line_no: i,
                timestamp: i as i64,
                template_id: i,
                label: Some(*l),
                session_key: Some(k.to_string()),
            })
            .collect()
    }

    #[test]
    fn elapsed_examples() {
        let ts = [1131060239, 1131060240, 1131060240, 1131060241, 1131060243, 1131060244, 1131060245];
        assert_eq!(compute_elapsed(&ts).unwrap(), vec![0, 1, 1, 2, 4, 5, 6]);
        assert_eq!(compute_elapsed(&[5, 5, 5]).unwrap(), vec![0, 0, 0]);
        assert_eq!(compute_elapsed(&[10]).unwrap(), vec![0]);
        assert!(compute_elapsed(&[]).is_err());
        assert_eq!(compute_elapsed(&[10, 12, 11, 13]).unwrap(), vec![0, 2, 2, 3]);
    }

    #[test]
    fn session_grouping() {
        let ev = keyed(&["blk_A", "blk_B", "blk_A"], &[0, 0, 0]);
        let seqs = group_by_session(&ev, None).unwrap();
        assert_eq!(seqs.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(seqs[0].events, vec![0, 2]);

        let ev = keyed(&["k", "k", "k"], &[0, 1, 0]);
        let seqs = group_by_session(&ev, None).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].events, vec![0, 1, 2]);
        assert_eq!(seqs[0].label, 1);

        let labels: HashMap<String, u8> = [("k".to_string(), 0)].into();
        assert_eq!(group_by_session(&ev, Some(&labels)).unwrap()[0].label, 0);

        let mut ev = keyed(&["k", "k"], &[0, 0]);
        ev[1].session_key = None;
        ev[1].line_no = 41;
        let err = group_by_session(&ev, None).unwrap_err().to_string();
        assert!(err.contains("41"), "{err}");
    }

    #[test]
    fn variable_window_starts() {
        let spec = WindowSpec { seed: 3, ..WindowSpec::default() };
        let ev = stream(300);
        let w = make_variable_windows(&ev, &spec).unwrap();
        assert_eq!(w.len(), 3);
        // starts 0, 64, 128: the first event of each window
        for (win, start) in w.iter().zip([0usize, 64, 128]) {
            assert_eq!(win.events[0], start % 7);
            assert!(win.len() >= 128 && win.len() <= 300 - start);
        }
        assert!(make_variable_windows(&stream(127), &spec).unwrap().is_empty());
        assert_eq!(w, make_variable_windows(&ev, &spec).unwrap());
    }

    #[test]
    fn fixed_window_examples() {
        let w = make_fixed_windows(&stream(256), 128, 64).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].len(), 128);
        assert_eq!(w[2].events[0], 128 % 7);
        assert_eq!(make_fixed_windows(&stream(128), 128, 64).unwrap().len(), 1);
        let w = make_fixed_windows(&stream(10), 128, 64).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 10);
        // a tail past the last full window is covered once
        let w = make_fixed_windows(&stream(300), 128, 64).unwrap();
        assert_eq!(w.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![128, 128, 128, 108]);
    }

    #[test]
    fn label_examples() {
        assert_eq!(label_sequence(&[Some(0), Some(0), Some(0)]).unwrap(), 0);
        assert_eq!(label_sequence(&[Some(0), Some(1), Some(0)]).unwrap(), 1);
        assert_eq!(label_sequence(&[Some(1), Some(1)]).unwrap(), 1);
        assert!(label_sequence(&[Some(0), None]).is_err());
    }

    #[test]
    fn split_examples() {
        let items: Vec<usize> = (0..10).collect();
        let (train, test) = split_train_test(&items, &SplitSpec::default()).unwrap();
        assert_eq!(train, (0..8).collect::<Vec<_>>());
        assert_eq!(test, vec![8, 9]);
        let shuffled = SplitSpec { mode: SplitMode::ShuffledSessions, seed: 4, ..SplitSpec::default() };
        assert_eq!(
            split_train_test(&items, &shuffled).unwrap(),
            split_train_test(&items, &shuffled).unwrap()
        );
        let (train, test) = split_train_test(&items[..5], &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (4, 1));
        assert!(split_train_test(&items[..1], &SplitSpec::default()).is_err());
        let seventy = SplitSpec { train_fraction: 0.7, ..SplitSpec::default() };
        assert_eq!(split_train_test(&items, &seventy).unwrap().0.len(), 7);
    }

    #[test]
    fn split_mode_names() {
        let s: SplitSpec = serde_json::from_str(r#"{"mode":"shuffle"}"#).unwrap();
        assert_eq!(s.mode, SplitMode::ShuffledSessions);
        assert_eq!("chrono".parse::<SplitMode>().unwrap(), SplitMode::Chronological);
    }

    proptest! {
        #[test]
        fn variable_window_invariants(n in 0usize..400, min in 1usize..40, extra in 0usize..60,
                                      step in 1usize..30, seed in any::<u64>()) {
            let spec = WindowSpec { min_len: min, max_len: min + extra, step, seed };
            let ev = stream(n);
            let w = make_variable_windows(&ev, &spec).unwrap();
            let expected = if n >= min { (n - min) / step + 1 } else { 0 };
            prop_assert_eq!(w.len(), expected);
            for (i, s) in w.iter().enumerate() {
                let start = i * step;
                prop_assert!(s.len() >= min && s.len() <= (min + extra).min(n - start));
                prop_assert!(s.validate().is_ok());
                prop_assert_eq!(s.events[0], start % 7);
            }
        }

        #[test]
        fn fixed_windows_cover_the_stream(n in 1usize..300, size in 1usize..50, step in 1usize..50) {
            let w = make_fixed_windows(&stream(n), size, step).unwrap();
            prop_assert!(!w.is_empty());
            for s in &w {
                prop_assert!(s.len() >= 1 && s.len() <= size);
                prop_assert!(s.validate().is_ok());
            }
            // with step ≤ size every event falls in some window
            if step <= size {
                let last_start = (w.len() - 1) * step;
                prop_assert_eq!(last_start + w.last().unwrap().len(), n);
            }
        }

        #[test]
        fn split_is_a_partition(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>(), shuffle in any::<bool>()) {
            let items: Vec<usize> = (0..n).collect();
            let spec = SplitSpec {
                train_fraction: frac,
                mode: if shuffle { SplitMode::ShuffledSessions } else { SplitMode::Chronological },
                seed,
            };
            let (train, test) = split_train_test(&items, &spec).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(!train.is_empty() && !test.is_empty());
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }

        #[test]
        fn labeling_is_monotone(labels in prop::collection::vec(0u8..2, 1..20), pos in 0usize..20) {
            let base: Vec<Option<u8>> = labels.iter().map(|l| Some(*l)).collect();
            let before = label_sequence(&base).unwrap();
            let mut more = base.clone();
            more.insert(pos.min(more.len()), Some(1));
            prop_assert!(label_sequence(&more).unwrap() >= before);
        }

        #[test]
        fn elapsed_is_anchored_and_monotone(ts in prop::collection::vec(0i64..1_000_000, 1..50)) {
            let e = compute_elapsed(&ts).unwrap();
            prop_assert_eq!(e[0], 0);
            prop_assert!(e.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
