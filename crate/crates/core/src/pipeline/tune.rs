//! Grid search with stratified k-fold cross-validation.

use std::cmp::Ordering;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::dataset::{stratified_kfold, stratified_split_indices, LabeledDataset};
use crate::learners::{
    forest_fit, mlp_init, mlp_train, svm_fit_dataset, Activation, ForestParams, Kernel, SvmParams, TrainConfig,
    TrainedModel,
};
use crate::metrics::{binary_metrics, cv_estimate, ConfusionCounts};
use crate::resample::{balance, ResamplePlan, ResampleStrategy};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Kernel family before `γ` is resolved against the input dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Linear,
    Poly(u32),
    Rbf,
    Sigmoid,
}

impl KernelChoice {
    pub fn resolve(self, dim: usize) -> Kernel {
        match self {
            KernelChoice::Linear => Kernel::Linear,
            KernelChoice::Poly(d) => Kernel::poly(d, dim),
            KernelChoice::Rbf => Kernel::rbf(dim),
            KernelChoice::Sigmoid => Kernel::sigmoid(dim),
        }
    }

    pub fn name(self) -> String {
        match self {
            KernelChoice::Poly(d) => format!("poly{d}"),
            KernelChoice::Linear => "linear".into(),
            KernelChoice::Rbf => "rbf".into(),
            KernelChoice::Sigmoid => "sigmoid".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub batchnorm: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub validation_fraction: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: vec![40],
            activation: Activation::Relu,
            dropout: 0.0,
            batchnorm: false,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            validation_fraction: t.validation_fraction,
        }
    }
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Rf { n_estimators: usize, max_depth: Option<usize> },
    Svm { kernel: KernelChoice, c: f64 },
    Mlp(MlpConfig),
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::Rf { .. } => "rf",
            ModelConfig::Svm { .. } => "svm",
            ModelConfig::Mlp(_) => "mlp",
        }
    }

    /// Compact human-readable description.
    pub fn describe(&self) -> String {
        match self {
            ModelConfig::Rf { n_estimators, max_depth } => match max_depth {
                Some(d) => format!("rf n={n_estimators} depth={d}"),
                None => format!("rf n={n_estimators}"),
            },
            ModelConfig::Svm { kernel, c } => format!("svm {} C={c}", kernel.name()),
            ModelConfig::Mlp(m) => format!(
                "mlp {} {} dropout={} bn={} batch={}",
                m.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-"),
                m.activation.name(),
                m.dropout,
                if m.batchnorm { "yes" } else { "no" },
                m.batch_size
            ),
        }
    }

    /// Ordering key for "smaller model" tie-breaks.
    fn size_key(&self) -> (f64, f64) {
        match self {
            ModelConfig::Rf { n_estimators, max_depth } => {
                (*n_estimators as f64, max_depth.map_or(f64::INFINITY, |d| d as f64))
            }
            ModelConfig::Svm { c, .. } => (*c, 0.0),
            ModelConfig::Mlp(m) => (m.hidden.iter().sum::<usize>() as f64, m.batch_size as f64),
        }
    }
}

/// Estimator counts 10, 20, … (11 values for hERG, 10 for Nav1.5).
pub fn rf_space(target: Target) -> Vec<ModelConfig> {
    let top = match target {
        Target::Herg => 110,
        Target::Nav15 => 100,
    };
    (10..=top).step_by(10).map(|n| ModelConfig::Rf { n_estimators: n, max_depth: None }).collect()
}

pub const SVM_C_VALUES: [f64; 10] = [0.1, 0.2, 0.5, 0.8, 1.0, 3.0, 5.0, 10.0, 50.0, 100.0];

/// Linear, polynomial of degree 2–10, sigmoid and RBF kernels, each with ten
/// values of C.
pub fn svm_space() -> Vec<ModelConfig> {
    let kernels = std::iter::once(KernelChoice::Linear)
        .chain((2..=10).map(KernelChoice::Poly))
        .chain([KernelChoice::Sigmoid, KernelChoice::Rbf]);
    kernels.flat_map(|kernel| SVM_C_VALUES.iter().map(move |&c| ModelConfig::Svm { kernel, c })).collect()
}

/// Activation × dropout (0 or 0.5) × batch norm × batch size (256 or 512).
pub fn mlp_space(base: &MlpConfig) -> Vec<ModelConfig> {
    let mut out = Vec::with_capacity(16);
    for activation in [Activation::Relu, Activation::Sigmoid] {
        for dropout in [0.5, 0.0] {
            for batchnorm in [true, false] {
                for batch_size in [256, 512] {
                    out.push(ModelConfig::Mlp(MlpConfig {
                        activation,
                        dropout,
                        batchnorm,
                        batch_size,
                        ..base.clone()
                    }));
                }
            }
        }
    }
    out
}

/// Trains one configuration on `data`. SVMs require binary labels and treat
/// class 1 as `+1`.
pub fn fit_config(config: &ModelConfig, data: &LabeledDataset, seed: u64) -> Result<TrainedModel> {
    match config {
        ModelConfig::Rf { n_estimators, max_depth } => {
            let params = ForestParams::new(*n_estimators, *max_depth, seed);
            Ok(TrainedModel::Forest(forest_fit(data, &params)?))
        }
        ModelConfig::Svm { kernel, c } => {
            if data.n_classes() != 2 {
                return Err(Error::invalid("SVM configurations need binary labels"));
            }
            let params = SvmParams::new(kernel.resolve(data.n_features()), *c);
            Ok(TrainedModel::Svm(svm_fit_dataset(data, 1, &params)?))
        }
        ModelConfig::Mlp(m) => {
            let mut sizes = vec![data.n_features()];
            sizes.extend(&m.hidden);
            sizes.push(data.n_classes());
            let model = mlp_init(&sizes, m.activation, derive_seed(seed, 0))?
                .with_dropout(m.dropout)?
                .with_batchnorm(m.batchnorm);
            let (inner, val) =
                stratified_split_indices(&data.labels, &data.class_names, m.validation_fraction, derive_seed(seed, 1))?;
            let cfg = TrainConfig {
                learning_rate: m.learning_rate,
                weight_decay: m.weight_decay,
                batch_size: m.batch_size,
                epochs: m.epochs,
                seed: derive_seed(seed, 2),
                validation_fraction: m.validation_fraction,
            };
            let out = mlp_train(&model, &data.subset(&inner), &data.subset(&val), &cfg)?;
            Ok(TrainedModel::Mlp(out.model))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOptions {
    pub k: usize,
    pub strategy: ResampleStrategy,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self { k: 10, strategy: ResampleStrategy::Original, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub config: ModelConfig,
    pub ac_cv: f64,
    /// Binary F1 on class 1, or macro F1 for more than two classes.
    pub f1_cv: f64,
    pub fold_accuracy: Vec<f64>,
    pub fold_f1: Vec<f64>,
    /// Deepest tree seen across folds (forests only).
    pub max_depth_observed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    /// Best first.
    pub results: Vec<TuneResult>,
    pub strategy: ResampleStrategy,
    pub class_names: Vec<String>,
    /// Class counts of the full training set after resampling.
    pub class_distribution: Vec<usize>,
}

impl TuneReport {
    pub fn best(&self) -> &TuneResult {
        &self.results[0]
    }

    pub fn to_csv(&self) -> String {
        let dist = self.class_distribution.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(":");
        let mut out = String::from("rank,model,sampling,class_distribution,ac_cv,f1_cv,n_estimators,max_depth\n");
        for (i, r) in self.results.iter().enumerate() {
            let n_est = match &r.config {
                ModelConfig::Rf { n_estimators, .. } => n_estimators.to_string(),
                _ => String::new(),
            };
            let depth = r.max_depth_observed.map(|d| d.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{dist},{:.6},{:.6},{n_est},{depth}\n",
                i + 1,
                r.config.describe(),
                self.strategy.label(),
                r.ac_cv,
                r.f1_cv
            ));
        }
        out
    }
}

fn resampled_counts(counts: &[usize], strategy: ResampleStrategy) -> Vec<usize> {
    match strategy {
        ResampleStrategy::Original => counts.to_vec(),
        ResampleStrategy::OverSample => {
            let m = counts.iter().copied().max().unwrap_or(0);
            counts.iter().map(|&c| if c == 0 { 0 } else { m }).collect()
        }
        ResampleStrategy::UnderSample => {
            let m = counts.iter().copied().min().unwrap_or(0);
            vec![m; counts.len()]
        }
    }
}

/// F1 of class 1 for binary labels, macro-averaged F1 otherwise.
fn f1_score(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<f64> {
    let per_class = |c: usize| -> Result<f64> {
        let t: Vec<bool> = truth.iter().map(|&l| l == c).collect();
        let p: Vec<bool> = predicted.iter().map(|&l| l == c).collect();
        Ok(binary_metrics(&ConfusionCounts::from_flags(&t, &p)?)?.f1)
    };
    if n_classes == 2 {
        per_class(1)
    } else {
        let sum = (0..n_classes).map(per_class).sum::<Result<f64>>()?;
        Ok(sum / n_classes as f64)
    }
}

fn compare(a: &TuneResult, b: &TuneResult) -> Ordering {
    b.ac_cv.total_cmp(&a.ac_cv).then(b.f1_cv.total_cmp(&a.f1_cv)).then_with(|| {
        let (x, y) = (a.config.size_key(), b.config.size_key());
        x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1))
    })
}

/// Cross-validates every configuration on the same stratified folds and
/// ranks them by AC_cv, then F1_cv, then model size. Resampling is applied
/// to each training fold only. Configurations run in parallel; the result
/// does not depend on the thread count.
pub fn tune_grid(space: &[ModelConfig], dataset: &LabeledDataset, options: &TuneOptions) -> Result<TuneReport> {
    if space.is_empty() {
        return Err(Error::invalid("hyperparameter space is empty"));
    }
    let folds = stratified_kfold(dataset, options.k, options.seed)?;
    let train_sets = (0..folds.k())
        .map(|i| {
            let train = dataset.subset(&folds.train_indices(i));
            balance(&train, &ResamplePlan::new(options.strategy, derive_seed(options.seed, i as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_classes = dataset.n_classes();

    let evaluated = space
        .par_iter()
        .enumerate()
        .map(|(ci, config)| -> Result<(usize, TuneResult)> {
            let mut fold_accuracy = Vec::with_capacity(folds.k());
            let mut fold_f1 = Vec::with_capacity(folds.k());
            let mut depth: Option<usize> = None;
            for (fi, fold) in folds.folds.iter().enumerate() {
                if fold.is_empty() {
                    continue;
                }
                let seed = derive_seed(derive_seed(options.seed, 1_000 + ci as u64), fi as u64);
                let model = fit_config(config, &train_sets[fi], seed)?;
                if let TrainedModel::Forest(f) = &model {
                    depth = Some(depth.unwrap_or(0).max(f.max_depth_observed()));
                }
                let x = dataset.matrix.select(Axis(0), fold);
                let truth: Vec<usize> = fold.iter().map(|&r| dataset.labels[r]).collect();
                let predicted = x.rows().into_iter().map(|r| model.predict_class(r)).collect::<Result<Vec<_>>>()?;
                let hits = truth.iter().zip(&predicted).filter(|(a, b)| a == b).count();
                fold_accuracy.push(hits as f64 / truth.len() as f64);
                fold_f1.push(f1_score(&truth, &predicted, n_classes)?);
            }
            Ok((
                ci,
                TuneResult {
                    config: config.clone(),
                    ac_cv: cv_estimate(&fold_accuracy)?,
                    f1_cv: cv_estimate(&fold_f1)?,
                    fold_accuracy,
                    fold_f1,
                    max_depth_observed: depth,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut indexed = evaluated;
    indexed.sort_by(|(ia, a), (ib, b)| compare(a, b).then(ia.cmp(ib)));
    Ok(TuneReport {
        results: indexed.into_iter().map(|(_, r)| r).collect(),
        strategy: options.strategy,
        class_names: dataset.class_names.clone(),
        class_distribution: resampled_counts(&dataset.class_counts(), options.strategy),
    })
}
