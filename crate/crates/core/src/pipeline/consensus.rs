use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::{StageDecision, SubModel};
use crate::hexfloat;
use crate::learners::BinaryVote;
use crate::{Error, Result};

pub const DEFAULT_PROB_TOLERANCE: f64 = 1e-9;

/// Two same-threshold models whose disagreements are settled by
/// confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusPair {
    pub name: String,
    pub model_a: SubModel,
    pub model_b: SubModel,
    #[serde(with = "hexfloat::scalar")]
    pub prob_tolerance: f64,
}

impl ConsensusPair {
    pub fn new(model_a: SubModel, model_b: SubModel) -> Result<Self> {
        let pair = Self {
            name: format!("consensus({}, {})", model_a.name, model_b.name),
            model_a,
            model_b,
            prob_tolerance: DEFAULT_PROB_TOLERANCE,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Result<Self> {
        self.prob_tolerance = tol;
        self.validate()?;
        Ok(self)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.model_a.threshold != self.model_b.threshold {
            return Err(Error::Pipeline(format!(
                "consensus members disagree on threshold: {} vs {}",
                self.model_a.threshold, self.model_b.threshold
            )));
        }
        if self.model_a.model.n_features() != self.model_b.model.n_features() {
            return Err(Error::Pipeline("consensus members use different feature spaces".into()));
        }
        if !(self.prob_tolerance >= 0.0) {
            return Err(Error::Pipeline("consensus tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Agreement keeps the shared label with the larger probability. On
/// disagreement the more confident model wins, unless the two
/// probabilities are within `tol`.
pub fn consensus_rule(a: BinaryVote, b: BinaryVote, tol: f64) -> StageDecision {
    let wrap = |positive: bool, p: f64| if positive { StageDecision::Blocker(p) } else { StageDecision::NonBlocker(p) };
    if a.positive == b.positive {
        return wrap(a.positive, a.probability.max(b.probability));
    }
    if (a.probability - b.probability).abs() <= tol {
        return StageDecision::Inconclusive;
    }
    if a.probability > b.probability {
        wrap(a.positive, a.probability)
    } else {
        wrap(b.positive, b.probability)
    }
}

pub fn consensus_predict(pair: &ConsensusPair, row: ArrayView1<f64>) -> Result<StageDecision> {
    let a = pair.model_a.model.binary_vote(row, pair.model_a.positive_class)?;
    let b = pair.model_b.model.binary_vote(row, pair.model_b.positive_class)?;
    Ok(consensus_rule(a, b, pair.prob_tolerance))
}
