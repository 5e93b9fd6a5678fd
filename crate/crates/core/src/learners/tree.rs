//! CART-style decision trees: Gini for classification, squared error for
//! regression. Nodes live in a flat arena in preorder.

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hexfloat;

/// Relative tolerance under which two split scores count as tied; the
/// earlier candidate (lower feature, then lower threshold) wins.
pub(crate) const SCORE_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node<L> {
    Split {
        feature: usize,
        #[serde(with = "hexfloat::scalar")]
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(L),
}

/// Class counts of the training rows that reached a leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLeaf {
    pub counts: Vec<u32>,
}

impl ClassLeaf {
    /// Majority class, ties to the lower index.
    pub fn class(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanLeaf {
    #[serde(with = "hexfloat::scalar")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
    pub n_features: usize,
    pub depth: usize,
}

pub type ClassificationTree = Tree<ClassLeaf>;
pub type RegressionTree = Tree<MeanLeaf>;

impl<L> Tree<L> {
    pub fn leaf_for(&self, row: ArrayView1<f64>) -> &L {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf(l) => return l,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

impl ClassificationTree {
    pub fn predict(&self, row: ArrayView1<f64>) -> usize {
        self.leaf_for(row).class()
    }
}

impl RegressionTree {
    pub fn predict(&self, row: ArrayView1<f64>) -> f64 {
        self.leaf_for(row).value
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    /// Minimum rows on each side of a split.
    pub min_leaf: usize,
    pub features_per_split: usize,
}

/// What a node optimizes. Scores are "larger is better" and comparable only
/// within one node.
trait Criterion {
    type Leaf;
    fn leaf(&self, rows: &[usize]) -> Self::Leaf;
    fn is_pure(&self, rows: &[usize]) -> bool;
    /// Best `(score, threshold)` on one feature, rows pre-sorted by it.
    fn best_on_feature(&self, x: &Array2<f64>, feature: usize, sorted: &[usize], min_leaf: usize)
        -> Option<(f64, f64)>;
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

struct Gini<'a> {
    labels: &'a [usize],
    n_classes: usize,
}

impl Criterion for Gini<'_> {
    type Leaf = ClassLeaf;

    fn leaf(&self, rows: &[usize]) -> ClassLeaf {
        let mut counts = vec![0u32; self.n_classes];
        for &r in rows {
            counts[self.labels[r]] += 1;
        }
        ClassLeaf { counts }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        rows.iter().all(|&r| self.labels[r] == self.labels[rows[0]])
    }

    // Maximizing Σc_l²/n_l + Σc_r²/n_r is equivalent to minimizing the
    // size-weighted child Gini impurity.
    fn best_on_feature(
        &self,
        x: &Array2<f64>,
        feature: usize,
        sorted: &[usize],
        min_leaf: usize,
    ) -> Option<(f64, f64)> {
        let n = sorted.len();
        let mut right = vec![0f64; self.n_classes];
        for &r in sorted {
            right[self.labels[r]] += 1.0;
        }
        let mut left = vec![0f64; self.n_classes];
        let mut left_sq = 0.0;
        let mut right_sq: f64 = right.iter().map(|c| c * c).sum();
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            let c = self.labels[sorted[i]];
            left_sq += 2.0 * left[c] + 1.0;
            left[c] += 1.0;
            right_sq -= 2.0 * right[c] - 1.0;
            right[c] -= 1.0;
            let (nl, nr) = (i + 1, n - i - 1);
            let a = x[[sorted[i], feature]];
            let b = x[[sorted[i + 1], feature]];
            if a == b || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let score = left_sq / nl as f64 + right_sq / nr as f64;
            if best.is_none_or(|(s, _)| score > s + SCORE_TIE_TOL * s.abs().max(1.0)) {
                best = Some((score, midpoint(a, b)));
            }
        }
        best
    }
}

struct SquaredError<'a> {
    targets: &'a [f64],
}

impl Criterion for SquaredError<'_> {
    type Leaf = MeanLeaf;

    fn leaf(&self, rows: &[usize]) -> MeanLeaf {
        let sum: f64 = rows.iter().map(|&r| self.targets[r]).sum();
        MeanLeaf { value: sum / rows.len() as f64 }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        rows.iter().all(|&r| self.targets[r] == self.targets[rows[0]])
    }

    // Maximizing S_l²/n_l + S_r²/n_r minimizes the children's summed SSE.
    fn best_on_feature(
        &self,
        x: &Array2<f64>,
        feature: usize,
        sorted: &[usize],
        min_leaf: usize,
    ) -> Option<(f64, f64)> {
        let n = sorted.len();
        let total: f64 = sorted.iter().map(|&r| self.targets[r]).sum();
        let mut left = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            left += self.targets[sorted[i]];
            let (nl, nr) = (i + 1, n - i - 1);
            let a = x[[sorted[i], feature]];
            let b = x[[sorted[i + 1], feature]];
            if a == b || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let right = total - left;
            let score = left * left / nl as f64 + right * right / nr as f64;
            if best.is_none_or(|(s, _)| score > s + SCORE_TIE_TOL * s.abs().max(1.0)) {
                best = Some((score, midpoint(a, b)));
            }
        }
        best
    }
}

struct Builder<'a, C: Criterion, R: Rng> {
    x: &'a Array2<f64>,
    criterion: C,
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node<C::Leaf>>,
    depth: usize,
}

impl<C: Criterion, R: Rng> Builder<'_, C, R> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.depth = self.depth.max(depth);
        let at_limit = self.params.max_depth.is_some_and(|d| depth >= d);
        let too_small = rows.len() < 2 * self.params.min_leaf.max(1);
        if at_limit || too_small || self.criterion.is_pure(&rows) {
            self.nodes.push(Node::Leaf(self.criterion.leaf(&rows)));
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            self.nodes.push(Node::Leaf(self.criterion.leaf(&rows)));
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[[r, feature]] <= threshold);
        // Placeholder until both children have ids.
        self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let d = self.x.ncols();
        let m = self.params.features_per_split.clamp(1, d);
        let mut features: Vec<usize> = if m >= d { (0..d).collect() } else { sample(self.rng, d, m).into_vec() };
        features.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for f in features {
            sorted.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            if let Some((score, thr)) = self.criterion.best_on_feature(self.x, f, &sorted, self.params.min_leaf.max(1))
            {
                if best.is_none_or(|(s, ..)| score > s + SCORE_TIE_TOL * s.abs().max(1.0)) {
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn build<C: Criterion, R: Rng>(
    x: &Array2<f64>,
    rows: Vec<usize>,
    criterion: C,
    params: TreeParams,
    rng: &mut R,
) -> Tree<C::Leaf> {
    let mut b = Builder { x, criterion, params, rng, nodes: Vec::new(), depth: 0 };
    b.grow(rows, 0);
    Tree { nodes: b.nodes, n_features: x.ncols(), depth: b.depth }
}

/// Grows a Gini tree on `rows` of `x` (duplicates allowed, as in a
/// bootstrap sample).
pub fn tree_fit_rows<R: Rng>(
    x: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    rows: Vec<usize>,
    params: TreeParams,
    rng: &mut R,
) -> ClassificationTree {
    build(x, rows, Gini { labels, n_classes }, params, rng)
}

/// Grows a Gini tree on all rows.
pub fn tree_fit<R: Rng>(
    x: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    params: TreeParams,
    rng: &mut R,
) -> ClassificationTree {
    tree_fit_rows(x, labels, n_classes, (0..x.nrows()).collect(), params, rng)
}

pub fn regression_tree_fit_rows<R: Rng>(
    x: &Array2<f64>,
    targets: &[f64],
    rows: Vec<usize>,
    params: TreeParams,
    rng: &mut R,
) -> RegressionTree {
    build(x, rows, SquaredError { targets }, params, rng)
}
