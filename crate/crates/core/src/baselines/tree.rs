use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        label: u8,
        samples: usize,
        impurity: f64,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] ≤ threshold` go left.
        threshold: f64,
        samples: usize,
        impurity: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn impurity(&self) -> f64 {
        match self {
            TreeNode::Leaf { impurity, .. } | TreeNode::Split { impurity, .. } => *impurity,
        }
    }

    pub fn samples(&self) -> usize {
        match self {
            TreeNode::Leaf { samples, .. } | TreeNode::Split { samples, .. } => *samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
}

fn gini(ones: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = ones as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// An exact tie goes to the lower class, 0, as an argmax over class
/// counts would.
fn majority(ones: usize, n: usize) -> u8 {
    u8::from(2 * ones > n)
}

struct Fit<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    max_depth: Option<usize>,
    min_leaf: usize,
}

impl Fit<'_> {
    fn grow(&self, idx: &mut [usize], depth: usize) -> TreeNode {
        let n = idx.len();
        let ones = idx.iter().filter(|&&i| self.y[i] != 0).count();
        let impurity = gini(ones, n);
        let leaf = TreeNode::Leaf {
            label: majority(ones, n),
            samples: n,
            impurity,
        };
        if impurity == 0.0 || self.max_depth.is_some_and(|d| depth >= d) || n < 2 * self.min_leaf {
            return leaf;
        }
        let Some((feature, threshold, child_impurity)) = self.best_split(idx, ones) else {
            return leaf;
        };
        if child_impurity >= impurity {
            return leaf;
        }
        let mid = partition(idx, |i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(mid);
        TreeNode::Split {
            feature,
            threshold,
            samples: n,
            impurity,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
        }
    }

    /// Lowest weighted child Gini; ties keep the lowest feature, then the
    /// lowest threshold.
    fn best_split(&self, idx: &[usize], ones: usize) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let features = self.x[idx[0]].len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut vals: Vec<(f64, u8)> = Vec::with_capacity(n);
        for f in 0..features {
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_n = 0;
            let mut left_ones = 0;
            for j in 0..n - 1 {
                left_n += 1;
                left_ones += usize::from(vals[j].1 != 0);
                if vals[j].0 == vals[j + 1].0 {
                    continue;
                }
                let right_n = n - left_n;
                if left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let w = (left_n as f64 * gini(left_ones, left_n)
                    + right_n as f64 * gini(ones - left_ones, right_n))
                    / n as f64;
                if best.is_none_or(|(_, _, b)| w < b) {
                    best = Some((f, vals[j].0, w));
                }
            }
        }
        best
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    // stable, so the ordering of samples inside a node never depends on history
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| pred(i));
    let mid = l.len();
    idx[..mid].copy_from_slice(&l);
    idx[mid..].copy_from_slice(&r);
    mid
}

/// CART with Gini impurity and axis-aligned `≤` splits at observed values.
/// `max_depth = None` grows until leaves are pure or too small to split.
pub fn dt_fit(x: &[Vec<f64>], y: &[u8], max_depth: Option<usize>, min_leaf: usize) -> Result<DecisionTree> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::data(format!(
            "decision tree needs matching non-empty data, got {} rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    let fit = Fit {
        x,
        y,
        max_depth,
        min_leaf: min_leaf.max(1),
    };
    let mut idx: Vec<usize> = (0..x.len()).collect();
    Ok(DecisionTree {
        root: fit.grow(&mut idx, 0),
    })
}

pub fn dt_predict(tree: &DecisionTree, query: &[f64]) -> u8 {
    let mut node = &tree.root;
    loop {
        match node {
            TreeNode::Leaf { label, .. } => return *label,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let v = query.get(*feature).copied().unwrap_or(0.0);
                node = if v <= *threshold { left } else { right };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_split_separates() {
        let x = vec![vec![0.0, 1.0], vec![5.0, 1.0]];
        let t = dt_fit(&x, &[0, 1], None, 1).unwrap();
        match &t.root {
            TreeNode::Split { feature, threshold, left, right, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.0);
                assert!(matches!(**left, TreeNode::Leaf { label: 0, .. }));
                assert!(matches!(**right, TreeNode::Leaf { label: 1, .. }));
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(dt_predict(&t, &[0.0, 1.0]), 0);
        assert_eq!(dt_predict(&t, &[5.0, 1.0]), 1);
    }

    #[test]
    fn pure_data_and_depth_zero_give_stumps() {
        let x = vec![vec![0.0], vec![3.0], vec![4.0]];
        let t = dt_fit(&x, &[1, 1, 1], None, 1).unwrap();
        assert_eq!(t.root.depth(), 0);
        assert_eq!(dt_predict(&t, &[100.0]), 1);
        let t = dt_fit(&x, &[0, 0, 1], Some(0), 1).unwrap();
        assert_eq!(t.root.depth(), 0);
        assert_eq!(dt_predict(&t, &[4.0]), 0);
    }

    #[test]
    fn tied_leaf_predicts_normal() {
        // identical points with both labels cannot be split
        let x = vec![vec![2.0, 1.0], vec![2.0, 1.0]];
        let t = dt_fit(&x, &[1, 0], None, 1).unwrap();
        assert_eq!(dt_predict(&t, &[2.0, 1.0]), 0);
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let t = dt_fit(&x, &[0, 1, 1, 1], None, 2).unwrap();
        // the perfect split would leave one sample on the left
        if let TreeNode::Split { left, right, .. } = &t.root {
            assert!(left.samples() >= 2 && right.samples() >= 2);
        }
    }

    fn check_path(node: &TreeNode) -> bool {
        match node {
            TreeNode::Leaf { .. } => true,
            TreeNode::Split { impurity, samples, left, right, .. } => {
                let weighted = (left.samples() as f64 * left.impurity()
                    + right.samples() as f64 * right.impurity())
                    / *samples as f64;
                weighted <= *impurity + 1e-12 && check_path(left) && check_path(right)
            }
        }
    }

    proptest! {
        #[test]
        fn impurity_never_grows_and_fit_is_deterministic(
            rows in prop::collection::vec((prop::collection::vec(0u8..6, 3), 0u8..2), 1..60),
            depth in prop::option::of(0usize..6),
            min_leaf in 1usize..4,
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|(f, _)| f.iter().map(|&v| f64::from(v)).collect()).collect();
            let y: Vec<u8> = rows.iter().map(|(_, l)| *l).collect();
            let t = dt_fit(&x, &y, depth, min_leaf).unwrap();
            prop_assert!(check_path(&t.root));
            if let Some(d) = depth {
                prop_assert!(t.root.depth() <= d);
            }
            prop_assert_eq!(t, dt_fit(&x, &y, depth, min_leaf).unwrap());
        }
    }
}
