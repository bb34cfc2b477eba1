use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Maps template ids seen in training to count-vector positions. Any other
/// id is counted in the overflow slot at index `len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    ids: Vec<usize>,
    #[serde(skip)]
    index: HashMap<usize, usize>,
}

impl Vocab {
    pub fn new(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Vocab { ids, index }
    }

    /// Ids `0..n`.
    pub fn dense(n: usize) -> Self {
        Self::new((0..n).collect())
    }

    pub fn from_sequences<'a>(events: impl IntoIterator<Item = &'a [usize]>) -> Self {
        Self::new(events.into_iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }
}

/// Message count vector: occurrences per vocabulary entry plus overflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mcv {
    pub counts: Vec<u32>,
}

impl Mcv {
    pub fn as_features(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }
}

pub fn build_mcv(events: &[usize], vocab: &Vocab) -> Mcv {
    let mut counts = vec![0u32; vocab.len() + 1];
    for &e in events {
        counts[vocab.position(e).unwrap_or(vocab.len())] += 1;
    }
    Mcv { counts }
}
