//! Bagged random forests (classification and regression).

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{regression_tree_fit_rows, tree_fit_rows, ClassificationTree, RegressionTree, TreeParams};
use crate::dataset::LabeledDataset;
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Defaults to ⌈√D⌉ for classification and D for regression.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_estimators: 100, max_depth: None, min_leaf: 1, features_per_split: None, seed: 0 }
    }
}

impl ForestParams {
    pub fn new(n_estimators: usize, max_depth: Option<usize>, seed: u64) -> Self {
        Self { n_estimators, max_depth, seed, ..Default::default() }
    }
}

fn sqrt_features(d: usize) -> usize {
    (d as f64).sqrt().ceil().max(1.0) as usize
}

fn bootstrap<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<ClassificationTree>,
    pub n_classes: usize,
    pub n_features: usize,
    pub params: ForestParams,
}

/// Fits `n_estimators` Gini trees, each on its own bootstrap sample. Tree
/// `i` draws from stream `i` of `seed`, so the model does not depend on how
/// many threads build it.
pub fn forest_fit(dataset: &LabeledDataset, params: &ForestParams) -> Result<ForestModel> {
    if params.n_estimators == 0 {
        return Err(Error::invalid("forest needs at least one estimator"));
    }
    let n = dataset.n_rows();
    if n == 0 {
        return Err(Error::invalid("forest training set is empty"));
    }
    let d = dataset.n_features();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf.max(1),
        features_per_split: params.features_per_split.unwrap_or_else(|| sqrt_features(d)),
    };
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(params.seed, i as u64);
            let rows = bootstrap(n, &mut rng);
            tree_fit_rows(&dataset.matrix, &dataset.labels, dataset.n_classes(), rows, tree_params, &mut rng)
        })
        .collect();
    Ok(ForestModel { trees, n_classes: dataset.n_classes(), n_features: d, params: *params })
}

impl ForestModel {
    fn check(&self, row: ArrayView1<f64>) -> Result<()> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: row.len() });
        }
        Ok(())
    }

    /// Hard votes per class; sums to the number of trees.
    pub fn votes(&self, row: ArrayView1<f64>) -> Result<Vec<u32>> {
        self.check(row)?;
        let mut votes = vec![0u32; self.n_classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        Ok(votes)
    }

    /// Fraction of trees voting for each class.
    pub fn predict_proba(&self, row: ArrayView1<f64>) -> Result<Vec<f64>> {
        let n = self.trees.len() as f64;
        Ok(self.votes(row)?.into_iter().map(|v| f64::from(v) / n).collect())
    }

    /// Plurality class, ties to the lower index.
    pub fn predict(&self, row: ArrayView1<f64>) -> Result<usize> {
        let votes = self.votes(row)?;
        let mut best = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn predict_all(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        x.rows().into_iter().map(|r| self.predict(r)).collect()
    }

    /// Deepest tree in the ensemble.
    pub fn max_depth_observed(&self) -> usize {
        self.trees.iter().map(|t| t.depth).max().unwrap_or(0)
    }
}

pub fn forest_predict_proba(model: &ForestModel, row: &[f64]) -> Result<Vec<f64>> {
    model.predict_proba(ArrayView1::from(row))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRegressor {
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
    pub params: ForestParams,
}

/// Bagged squared-error trees; the prediction is the mean over trees.
pub fn forest_regress_fit(x: &Array2<f64>, y: &[f64], params: &ForestParams) -> Result<ForestRegressor> {
    if params.n_estimators == 0 {
        return Err(Error::invalid("forest needs at least one estimator"));
    }
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n == 0 {
        return Err(Error::invalid("forest training set is empty"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("regression targets must be finite"));
    }
    let d = x.ncols();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf.max(1),
        features_per_split: params.features_per_split.unwrap_or(d),
    };
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(params.seed, i as u64);
            let rows = bootstrap(n, &mut rng);
            regression_tree_fit_rows(x, y, rows, tree_params, &mut rng)
        })
        .collect();
    Ok(ForestRegressor { trees, n_features: d, params: *params })
}

impl ForestRegressor {
    pub fn predict(&self, row: ArrayView1<f64>) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: row.len() });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_all(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.predict(r)).collect()
    }
}
