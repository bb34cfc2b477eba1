use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote of the `k` nearest training points (Euclidean). Equal
/// distances favour the lower sample index; tied votes go to label 1.
pub fn knn_classify(train: &[Vec<f64>], labels: &[u8], query: &[f64], k: usize) -> Result<u8> {
    if train.is_empty() {
        return Err(Error::data("k-nearest-neighbours needs training points"));
    }
    if train.len() != labels.len() {
        return Err(Error::data(format!(
            "{} training points but {} labels",
            train.len(),
            labels.len()
        )));
    }
    if k == 0 || k > train.len() {
        return Err(Error::config(format!(
            "k = {k} must lie in 1..={} (the training size)",
            train.len()
        )));
    }
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, x)| (sq_dist(x, query), i))
        .collect();
    dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let ones = dist[..k].iter().filter(|(_, i)| labels[*i] != 0).count();
    Ok(u8::from(2 * ones >= k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub k: usize,
    pub train: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Knn {
    pub fn predict(&self, query: &[f64]) -> Result<u8> {
        knn_classify(&self.train, &self.labels, query, self.k)
    }
}
