use std::cell::Cell;

use ndarray::Array2;
use rand::Rng;

use super::*;
use crate::dataset::assign_class;
use crate::learners::{BinaryVote, Kernel, SvmModel, ThresholdRule};
use crate::preprocess::{fit_pca_k, fit_scaler};
use crate::rng::seeded;

struct Stub {
    name: String,
    threshold: f64,
    answer: StageDecision,
    calls: Cell<usize>,
}

impl Stub {
    fn new(threshold: f64, answer: StageDecision) -> Self {
        Self { name: threshold_tag(threshold), threshold, answer, calls: Cell::new(0) }
    }
}

impl BinaryStage for Stub {
    fn name(&self) -> &str {
        &self.name
    }
    fn threshold(&self) -> f64 {
        self.threshold
    }
    fn decide(&self, _row: ArrayView1<f64>) -> Result<StageDecision> {
        self.calls.set(self.calls.get() + 1);
        Ok(self.answer)
    }
}

const YES: StageDecision = StageDecision::Blocker(0.9);
const NO: StageDecision = StageDecision::NonBlocker(0.8);

fn run(answers: [StageDecision; 3]) -> (PredictionOutcome, [usize; 3]) {
    let stubs = [Stub::new(6.0, answers[0]), Stub::new(5.0, answers[1]), Stub::new(4.5, answers[2])];
    let out = cascade(&stubs, ArrayView1::from(&[0.0])).unwrap();
    (out, [0, 1, 2].map(|i| stubs[i].calls.get()))
}

#[test]
fn first_blocker_stops_routing() {
    let (out, calls) = run([YES, YES, YES]);
    assert_eq!(out.outcome, Outcome::StrongBlocker);
    assert_eq!(calls, [1, 0, 0]);
    assert_eq!(out.trace, vec!["6"]);
}

#[test]
fn all_negative_is_non_blocker() {
    let (out, calls) = run([NO, NO, NO]);
    assert_eq!(out.outcome, Outcome::NonBlocker);
    assert_eq!(calls, [1, 1, 1]);
}

#[test]
fn second_stage_decides_moderate() {
    let (out, calls) = run([NO, YES, NO]);
    assert_eq!(out.outcome, Outcome::ModerateBlocker);
    assert_eq!(out.deciding_stage, "5");
    assert_eq!(out.stage_probability, 0.9);
    assert_eq!(calls, [1, 1, 0]);
}

#[test]
fn inconclusive_propagates() {
    let (out, _) = run([NO, NO, StageDecision::Inconclusive]);
    assert_eq!(out.outcome, Outcome::Inconclusive);
    let (out, _) = run([NO, NO, YES]);
    assert_eq!(out.outcome, Outcome::WeakBlocker);
}

fn rule(threshold: f64, name: &str) -> SubModel {
    SubModel::new(name, threshold, TrainedModel::Rule(ThresholdRule { feature: 0, threshold, n_features: 1 }))
}

fn identity_preprocessing() -> Preprocessing {
    Preprocessing { whitelist: vec!["pic50".into()], scaler: None, pca: None }
}

fn rule_pipeline() -> ToxTreePipeline {
    let weak = ConsensusPair::new(rule(4.5, "4o5a"), rule(4.5, "4o5b")).unwrap();
    ToxTreePipeline::new(
        Target::Herg,
        identity_preprocessing(),
        vec![Stage::Single(rule(6.0, "6")), Stage::Single(rule(5.0, "5")), Stage::Consensus(weak)],
    )
    .unwrap()
}

#[test]
fn exact_stubs_reproduce_assign_class() {
    let p = rule_pipeline();
    let mut rng = seeded(42);
    let mut values: Vec<f64> = (0..1000).map(|_| rng.random_range(2.0..9.0)).collect();
    values.extend([6.0, 5.0, 4.5, 4.4999999, 5.9999999]);
    for v in values {
        let out = p.predict_transformed(&[v]).unwrap();
        assert_eq!(out.outcome.potency_class(), Some(assign_class(v).unwrap()), "pic50 {v}");
    }
}

fn vote(positive: bool, probability: f64) -> BinaryVote {
    BinaryVote { positive, probability }
}

#[test]
fn consensus_cases() {
    assert_eq!(consensus_rule(vote(true, 0.9), vote(true, 0.7), 1e-9), StageDecision::Blocker(0.9));
    assert_eq!(consensus_rule(vote(true, 0.8), vote(false, 0.6), 1e-9), StageDecision::Blocker(0.8));
    assert_eq!(consensus_rule(vote(false, 0.8), vote(true, 0.6), 1e-9), StageDecision::NonBlocker(0.8));
    assert_eq!(consensus_rule(vote(true, 0.7), vote(false, 0.7), 1e-9), StageDecision::Inconclusive);
}

#[test]
fn identical_consensus_members_match_single_model() {
    let x = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 13 + j * 7) % 17) as f64);
    let labels: Vec<usize> = (0..40).map(|i| usize::from(x[[i, 0]] > 8.0)).collect();
    let ds = crate::dataset::LabeledDataset::binary(x.clone(), labels).unwrap();
    let forest = crate::learners::forest_fit(&ds, &crate::learners::ForestParams::new(7, None, 3)).unwrap();
    let sub = SubModel::new("4o5rf", 4.5, TrainedModel::Forest(forest));
    let pair = ConsensusPair::new(sub.clone(), sub.clone()).unwrap();
    for row in x.rows() {
        let single = sub.decide(row).unwrap();
        assert_eq!(consensus_predict(&pair, row).unwrap(), single);
    }
}

#[test]
fn construction_errors() {
    let weak = ConsensusPair::new(rule(4.5, "a"), rule(4.5, "b")).unwrap();
    let scaler = ScalerParams { mean: vec![0.0], std: vec![1.0] };
    assert!(
        build_herg_pipeline(vec!["pic50".into()], scaler.clone(), rule(6.0, "6"), rule(5.0, "5"), weak.clone()).is_ok()
    );
    let err = build_herg_pipeline(vec!["pic50".into()], scaler, rule(5.0, "5"), rule(6.0, "6"), weak).unwrap_err();
    assert!(matches!(err, Error::Pipeline(_)));
    assert!(ConsensusPair::new(rule(4.5, "a"), rule(5.0, "b")).is_err());
}

#[test]
fn missing_feature_is_named() {
    let p = rule_pipeline();
    let err = p.predict_named(&["other".into()], &[Some(1.0)]).unwrap_err();
    assert!(matches!(err, Error::MissingFeature(ref n) if n == "pic50"));
    let err = p.predict_named(&["pic50".into()], &[None]).unwrap_err();
    assert!(matches!(err, Error::MissingFeature(_)));
}

/// Linear SVM computing `f(x) = x[feature] − threshold`.
fn stub_svm(feature: usize, threshold: f64, dim: usize, name: &str) -> SubModel {
    let mut sv = Array2::zeros((1, dim));
    sv[[0, feature]] = 1.0;
    let svm = SvmModel {
        kernel: Kernel::Linear,
        c: 1.0,
        support_vectors: sv,
        dual_coefs: vec![1.0],
        support_indices: vec![0],
        bias: -threshold,
        n_features: dim,
        converged: true,
        iterations: 0,
    };
    SubModel::new(name, threshold, TrainedModel::Svm(svm))
}

#[test]
fn nav_pipeline_chain() {
    let mut rng = seeded(1);
    let raw = Array2::from_shape_fn((30, 4), |_| rng.random::<f64>());
    let scaler = fit_scaler(&raw).unwrap();
    let pca = fit_pca_k(&scaler.transform(&raw).unwrap(), 2).unwrap();
    let names: Vec<String> = (0..4).map(|i| format!("d{i}")).collect();
    let models = [stub_svm(0, 6.0, 2, "6svm"), stub_svm(0, 5.0, 2, "5svm-ovrs"), stub_svm(0, 4.5, 2, "4o5svm")];
    let p = build_nav_pipeline(names.clone(), scaler.clone(), pca.clone(), models).unwrap();
    let values: Vec<Option<f64>> = raw.row(0).iter().map(|&v| Some(v)).collect();
    let out = p.predict_named(&names, &values).unwrap();
    assert_ne!(out.outcome, Outcome::Inconclusive);

    let wrong = [stub_svm(0, 6.0, 3, "6svm"), stub_svm(0, 5.0, 3, "5svm"), stub_svm(0, 4.5, 3, "4o5svm")];
    assert!(build_nav_pipeline(names, scaler, pca, wrong).is_err());
}

#[test]
fn nav_routing_with_stub_svms() {
    let pre = Preprocessing { whitelist: vec!["p".into()], scaler: None, pca: None };
    let stages = vec![
        Stage::Single(stub_svm(0, 6.0, 1, "6svm")),
        Stage::Single(stub_svm(0, 5.0, 1, "5svm-ovrs")),
        Stage::Single(stub_svm(0, 4.5, 1, "4o5svm")),
    ];
    let p = ToxTreePipeline::new(Target::Nav15, pre, stages).unwrap();
    for (v, expected) in [
        (7.0, Outcome::StrongBlocker),
        (5.5, Outcome::ModerateBlocker),
        (4.7, Outcome::WeakBlocker),
        (3.0, Outcome::NonBlocker),
    ] {
        assert_eq!(p.predict_transformed(&[v]).unwrap().outcome, expected);
    }
    // f = 0 exactly routes as a blocker.
    assert_eq!(p.predict_transformed(&[6.0]).unwrap().outcome, Outcome::StrongBlocker);
}

#[test]
fn tags() {
    assert_eq!(sub_model_name(6.0, "rf", "-ovrs"), "6rf-ovrs");
    assert_eq!(sub_model_name(4.5, "svm", ""), "4o5svm");
    assert_eq!(threshold_tag(5.0), "5");
}
