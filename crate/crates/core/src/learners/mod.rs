//! Supervised learners and the [`TrainedModel`] wrapper used by pipeline
//! stages.

pub mod forest;
pub mod mlp;
pub mod ridge;
pub mod svm;
pub mod tree;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::hexfloat;
use crate::{Error, Result};

pub use forest::{forest_fit, forest_predict_proba, forest_regress_fit, ForestModel, ForestParams, ForestRegressor};
pub use mlp::{mlp_init, mlp_train, Activation, MlpModel, Mode, TrainConfig, TrainOutcome};
pub use ridge::{ridge_fit, RidgeModel};
pub use svm::{kernel_eval, svm_decision, svm_fit, svm_fit_dataset, svm_predict, Kernel, SvmModel, SvmParams};
pub use tree::{tree_fit, ClassificationTree, RegressionTree, TreeParams};

/// Fixed rule `row[feature] ≥ threshold` → positive class. Useful as a
/// deterministic stand-in for a trained stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub feature: usize,
    #[serde(with = "hexfloat::scalar")]
    pub threshold: f64,
    pub n_features: usize,
}

/// A classifier that can serve as a binary pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "model", rename_all = "lowercase")]
pub enum TrainedModel {
    Forest(ForestModel),
    Svm(SvmModel),
    Mlp(MlpModel),
    Rule(ThresholdRule),
}

/// Binary verdict for one row plus the model's probability for that verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryVote {
    pub positive: bool,
    pub probability: f64,
}

impl TrainedModel {
    pub fn family(&self) -> &'static str {
        match self {
            TrainedModel::Forest(_) => "rf",
            TrainedModel::Svm(_) => "svm",
            TrainedModel::Mlp(_) => "mlp",
            TrainedModel::Rule(_) => "rule",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Forest(m) => m.n_features,
            TrainedModel::Svm(m) => m.n_features,
            TrainedModel::Mlp(m) => m.n_inputs(),
            TrainedModel::Rule(r) => r.n_features,
        }
    }

    /// Most likely class index. SVMs and rules are binary: `+1` maps to
    /// class 1.
    pub fn predict_class(&self, row: ArrayView1<f64>) -> Result<usize> {
        match self {
            TrainedModel::Forest(m) => m.predict(row),
            TrainedModel::Mlp(m) => Ok(argmax_lower(&m.predict_proba_row(&row.to_vec())?)),
            TrainedModel::Svm(_) | TrainedModel::Rule(_) => Ok(usize::from(self.binary_vote(row, 1)?.positive)),
        }
    }

    /// Predicts whether `row` belongs to `positive_class`.
    ///
    /// Forests and MLPs report the probability of their argmax class. SVMs
    /// are trained with `positive_class` as +1, decide by sign and report
    /// the logistic of the decision value for the chosen side.
    pub fn binary_vote(&self, row: ArrayView1<f64>, positive_class: usize) -> Result<BinaryVote> {
        if row.len() != self.n_features() {
            return Err(Error::DimensionMismatch { expected: self.n_features(), got: row.len() });
        }
        let from_proba = |p: &[f64]| -> Result<BinaryVote> {
            if positive_class >= p.len() {
                return Err(Error::invalid(format!("positive class {positive_class} out of range")));
            }
            let best = argmax_lower(p);
            Ok(BinaryVote { positive: best == positive_class, probability: p[best] })
        };
        match self {
            TrainedModel::Forest(m) => from_proba(&m.predict_proba(row)?),
            TrainedModel::Mlp(m) => from_proba(&m.predict_proba_row(&row.to_vec())?),
            TrainedModel::Svm(m) => {
                let p = m.pseudo_probability(row)?;
                let positive = m.decision(row)? >= 0.0;
                Ok(BinaryVote { positive, probability: if positive { p } else { 1.0 - p } })
            }
            TrainedModel::Rule(r) => Ok(BinaryVote { positive: row[r.feature] >= r.threshold, probability: 1.0 }),
        }
    }
}

fn argmax_lower(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_votes() {
        let m = TrainedModel::Rule(ThresholdRule { feature: 1, threshold: 5.0, n_features: 2 });
        assert!(m.binary_vote(ArrayView1::from(&[0.0, 5.0]), 1).unwrap().positive);
        assert!(!m.binary_vote(ArrayView1::from(&[9.0, 4.9]), 1).unwrap().positive);
        assert!(m.binary_vote(ArrayView1::from(&[1.0]), 1).is_err());
    }

    #[test]
    fn svm_vote_probability_is_for_chosen_side() {
        let x = ndarray::array![[-1.0], [1.0]];
        let svm = svm_fit(&x, &[-1.0, 1.0], &SvmParams::new(Kernel::Linear, 100.0)).unwrap();
        let m = TrainedModel::Svm(svm);
        let v = m.binary_vote(ArrayView1::from(&[-2.0]), 1).unwrap();
        assert!(!v.positive);
        assert!(v.probability > 0.5);
    }
}
