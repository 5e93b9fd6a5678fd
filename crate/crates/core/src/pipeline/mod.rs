//! Hierarchical potency classifiers and grid-search tuning.
//!
//! A pipeline maps a descriptor row through a fixed preprocessing chain and
//! then asks one binary stage per potency threshold, strongest first, whether
//! the compound is a blocker at that threshold. The first positive answer
//! decides the class.

mod consensus;
pub mod tune;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::dataset::PotencyClass;
use crate::hexfloat;
use crate::learners::TrainedModel;
use crate::preprocess::{PcaModel, ScalerParams};
use crate::{Error, Result};

pub use consensus::{consensus_predict, consensus_rule, ConsensusPair, DEFAULT_PROB_TOLERANCE};

/// Short tag for a threshold inside model names: `6`, `5`, `4o5`.
pub fn threshold_tag(threshold: f64) -> String {
    if threshold.fract() == 0.0 {
        format!("{threshold:.0}")
    } else {
        format!("{threshold}").replace('.', "o")
    }
}

/// Conventional sub-model name such as `6rf-ovrs` or `4o5svm`.
pub fn sub_model_name(threshold: f64, family: &str, suffix: &str) -> String {
    format!("{}{family}{suffix}", threshold_tag(threshold))
}

/// One trained binary model answering "blocker at `threshold`?".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModel {
    pub name: String,
    #[serde(with = "hexfloat::scalar")]
    pub threshold: f64,
    pub model: TrainedModel,
    /// Class index meaning "blocker at this threshold".
    pub positive_class: usize,
}

impl SubModel {
    pub fn new(name: impl Into<String>, threshold: f64, model: TrainedModel) -> Self {
        Self { name: name.into(), threshold, model, positive_class: crate::dataset::BLOCKER }
    }
}

/// What one stage says about one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageDecision {
    Blocker(f64),
    NonBlocker(f64),
    Inconclusive,
}

/// The routing contract of a pipeline stage.
pub trait BinaryStage {
    fn name(&self) -> &str;
    fn threshold(&self) -> f64;
    fn decide(&self, row: ArrayView1<f64>) -> Result<StageDecision>;
}

impl BinaryStage for SubModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn decide(&self, row: ArrayView1<f64>) -> Result<StageDecision> {
        let v = self.model.binary_vote(row, self.positive_class)?;
        Ok(if v.positive { StageDecision::Blocker(v.probability) } else { StageDecision::NonBlocker(v.probability) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum Stage {
    Single(SubModel),
    Consensus(ConsensusPair),
}

impl Stage {
    fn n_features(&self) -> usize {
        match self {
            Stage::Single(s) => s.model.n_features(),
            Stage::Consensus(p) => p.model_a.model.n_features(),
        }
    }
}

impl BinaryStage for Stage {
    fn name(&self) -> &str {
        match self {
            Stage::Single(s) => &s.name,
            Stage::Consensus(p) => &p.name,
        }
    }

    fn threshold(&self) -> f64 {
        match self {
            Stage::Single(s) => s.threshold,
            Stage::Consensus(p) => p.model_a.threshold,
        }
    }

    fn decide(&self, row: ArrayView1<f64>) -> Result<StageDecision> {
        match self {
            Stage::Single(s) => s.decide(row),
            Stage::Consensus(p) => consensus_predict(p, row),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    StrongBlocker,
    ModerateBlocker,
    WeakBlocker,
    NonBlocker,
    Inconclusive,
}

impl Outcome {
    /// Outcome for a blocker verdict at stage `position` (0 = strongest).
    pub fn from_stage_position(position: usize) -> Option<Self> {
        [Outcome::StrongBlocker, Outcome::ModerateBlocker, Outcome::WeakBlocker].get(position).copied()
    }

    pub fn potency_class(self) -> Option<PotencyClass> {
        match self {
            Outcome::StrongBlocker => Some(PotencyClass::Strong),
            Outcome::ModerateBlocker => Some(PotencyClass::Moderate),
            Outcome::WeakBlocker => Some(PotencyClass::Weak),
            Outcome::NonBlocker => Some(PotencyClass::Non),
            Outcome::Inconclusive => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self.potency_class() {
            Some(c) => c.name(),
            None => "inconclusive",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome {
    pub outcome: Outcome,
    pub deciding_stage: String,
    pub stage_probability: f64,
    /// Names of the stages evaluated, in order.
    pub trace: Vec<String>,
}

/// Runs `stages` in order until one reports a blocker or an inconclusive
/// verdict. Stages after the deciding one are never called.
pub fn cascade<S: BinaryStage>(stages: &[S], row: ArrayView1<f64>) -> Result<PredictionOutcome> {
    if stages.is_empty() {
        return Err(Error::Pipeline("pipeline has no stages".into()));
    }
    let mut trace = Vec::with_capacity(stages.len());
    let mut last_probability = 0.0;
    for (position, stage) in stages.iter().enumerate() {
        trace.push(stage.name().to_owned());
        match stage.decide(row)? {
            StageDecision::Blocker(p) => {
                let outcome = Outcome::from_stage_position(position)
                    .ok_or_else(|| Error::Pipeline(format!("no outcome for stage position {position}")))?;
                return Ok(PredictionOutcome {
                    outcome,
                    deciding_stage: stage.name().to_owned(),
                    stage_probability: p,
                    trace,
                });
            }
            StageDecision::Inconclusive => {
                return Ok(PredictionOutcome {
                    outcome: Outcome::Inconclusive,
                    deciding_stage: stage.name().to_owned(),
                    stage_probability: f64::NAN,
                    trace,
                });
            }
            StageDecision::NonBlocker(p) => last_probability = p,
        }
    }
    Ok(PredictionOutcome {
        outcome: Outcome::NonBlocker,
        deciding_stage: trace.last().cloned().unwrap_or_default(),
        stage_probability: last_probability,
        trace,
    })
}

/// Whitelist selection, then optional scaling, then optional projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub whitelist: Vec<String>,
    pub scaler: Option<ScalerParams>,
    pub pca: Option<PcaModel>,
}

impl Preprocessing {
    pub fn output_dim(&self) -> usize {
        match &self.pca {
            Some(p) => p.n_components(),
            None => self.whitelist.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.whitelist.is_empty() {
            return Err(Error::Pipeline("feature whitelist is empty".into()));
        }
        let mut dim = self.whitelist.len();
        if let Some(s) = &self.scaler {
            if s.dim() != dim {
                return Err(Error::Pipeline(format!("scaler expects {} features, whitelist has {dim}", s.dim())));
            }
        }
        if let Some(p) = &self.pca {
            if p.input_dim() != dim {
                return Err(Error::Pipeline(format!(
                    "PCA expects {} inputs, preceding step yields {dim}",
                    p.input_dim()
                )));
            }
            dim = p.n_components();
        }
        debug_assert_eq!(dim, self.output_dim());
        Ok(())
    }

    /// Column of each whitelisted feature within `feature_names`.
    pub fn bind(&self, feature_names: &[String]) -> Result<Vec<usize>> {
        let index: std::collections::HashMap<&str, usize> =
            feature_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        self.whitelist
            .iter()
            .map(|n| index.get(n.as_str()).copied().ok_or_else(|| Error::MissingFeature(n.clone())))
            .collect()
    }

    /// Applies the chain to one row, using a binding from [`Self::bind`].
    pub fn transform(&self, values: &[Option<f64>], binding: &[usize]) -> Result<Vec<f64>> {
        let mut row = binding
            .iter()
            .zip(&self.whitelist)
            .map(|(&c, name)| values.get(c).copied().flatten().ok_or_else(|| Error::MissingFeature(name.clone())))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(s) = &self.scaler {
            row = s.transform_row(&row)?;
        }
        if let Some(p) = &self.pca {
            row = p.project_row(&row)?;
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Herg,
    Nav15,
}

impl std::str::FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "herg" => Ok(Target::Herg),
            "nav15" | "nav1.5" => Ok(Target::Nav15),
            other => Err(Error::invalid(format!("unknown target '{other}' (expected herg or nav15)"))),
        }
    }
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Herg => "herg",
            Target::Nav15 => "nav15",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxTreePipeline {
    pub target: Target,
    pub preprocessing: Preprocessing,
    pub stages: Vec<Stage>,
}

impl ToxTreePipeline {
    /// Checks stage ordering, consensus pairing and dimension chaining.
    pub fn new(target: Target, preprocessing: Preprocessing, stages: Vec<Stage>) -> Result<Self> {
        preprocessing.validate()?;
        if stages.is_empty() || stages.len() > 3 {
            return Err(Error::Pipeline(format!("expected 1 to 3 stages, got {}", stages.len())));
        }
        for w in stages.windows(2) {
            if !(w[0].threshold() > w[1].threshold()) {
                return Err(Error::Pipeline(format!(
                    "stage thresholds must strictly descend: {} ({}) before {} ({})",
                    w[0].name(),
                    w[0].threshold(),
                    w[1].name(),
                    w[1].threshold()
                )));
            }
        }
        let dim = preprocessing.output_dim();
        for stage in &stages {
            if let Stage::Consensus(p) = stage {
                p.validate()?;
            }
            if stage.n_features() != dim {
                return Err(Error::Pipeline(format!(
                    "stage {} expects {} inputs, preprocessing yields {dim}",
                    stage.name(),
                    stage.n_features()
                )));
            }
        }
        Ok(Self { target, preprocessing, stages })
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.threshold()).collect()
    }

    /// Predicts from a row already in model space (after preprocessing).
    pub fn predict_transformed(&self, row: &[f64]) -> Result<PredictionOutcome> {
        cascade(&self.stages, ArrayView1::from(row))
    }

    /// Predicts from a raw descriptor row whose columns are `feature_names`.
    pub fn predict_named(&self, feature_names: &[String], values: &[Option<f64>]) -> Result<PredictionOutcome> {
        let binding = self.preprocessing.bind(feature_names)?;
        self.predict_bound(values, &binding)
    }

    /// Like [`Self::predict_named`] with a precomputed binding.
    pub fn predict_bound(&self, values: &[Option<f64>], binding: &[usize]) -> Result<PredictionOutcome> {
        let row = self.preprocessing.transform(values, binding)?;
        self.predict_transformed(&row)
    }
}

/// hERG cascade: `[strong, moderate, consensus(weak_a, weak_b)]` over
/// whitelisted, scaled descriptors.
pub fn build_herg_pipeline(
    whitelist: Vec<String>,
    scaler: ScalerParams,
    strong: SubModel,
    moderate: SubModel,
    weak: ConsensusPair,
) -> Result<ToxTreePipeline> {
    let pre = Preprocessing { whitelist, scaler: Some(scaler), pca: None };
    ToxTreePipeline::new(
        Target::Herg,
        pre,
        vec![Stage::Single(strong), Stage::Single(moderate), Stage::Consensus(weak)],
    )
}

/// Nav1.5 cascade: three single stages over whitelisted, scaled and
/// PCA-projected descriptors.
pub fn build_nav_pipeline(
    whitelist: Vec<String>,
    scaler: ScalerParams,
    pca: PcaModel,
    models: [SubModel; 3],
) -> Result<ToxTreePipeline> {
    let k = pca.n_components();
    for m in &models {
        if m.model.n_features() != k {
            return Err(Error::Pipeline(format!(
                "{} expects {} inputs but PCA keeps {k} components",
                m.name,
                m.model.n_features()
            )));
        }
    }
    let pre = Preprocessing { whitelist, scaler: Some(scaler), pca: Some(pca) };
    ToxTreePipeline::new(Target::Nav15, pre, models.into_iter().map(Stage::Single).collect())
}

#[cfg(test)]
mod tests;
