//! Fully connected softmax classifier trained with Adam.
//!
//! Hidden layers compute `a W + b`, then optional batch norm, then the
//! activation, then optional inverted dropout. The output layer is a plain
//! affine map followed by softmax.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::hexfloat;
use crate::rng::seeded;
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => h * (1.0 - h),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in × fan_out`.
    #[serde(with = "hexfloat::matrix")]
    pub weights: Array2<f64>,
    #[serde(with = "hexfloat::array1")]
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    #[serde(with = "hexfloat::array1")]
    pub scale: Array1<f64>,
    #[serde(with = "hexfloat::array1")]
    pub shift: Array1<f64>,
    #[serde(with = "hexfloat::array1")]
    pub running_mean: Array1<f64>,
    #[serde(with = "hexfloat::array1")]
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    #[serde(with = "hexfloat::scalar")]
    pub dropout_rate: f64,
    pub layers: Vec<Dense>,
    /// One entry per hidden layer.
    pub batchnorm: Vec<Option<BatchNorm>>,
    pub mode: Mode,
}

/// Per-batch normalization with population variance. Returns
/// `(normalized, mean, var)`.
pub fn batch_normalize(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = z.nrows() as f64;
    let mean = z.sum_axis(Axis(0)) / n;
    let centered = z - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    (centered * &inv_std, mean, var)
}

/// Builds a network with Kaiming-normal (relu) or Xavier-uniform (sigmoid)
/// weights and zero biases. Batch norm and dropout start disabled.
pub fn mlp_init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid("an MLP needs at least input and output sizes"));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("layer {pos} has size 0")));
    }
    let mut rng = seeded(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = match activation {
                Activation::Relu => {
                    let normal =
                        Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
                    Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut rng))
                }
                Activation::Sigmoid => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..=a))
                }
            };
            Ok(Dense { weights, bias: Array1::zeros(fan_out) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        activation,
        dropout_rate: 0.0,
        layers,
        batchnorm: vec![None; layer_sizes.len() - 2],
        mode: Mode::Train,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGradients {
    pub loss: f64,
    /// Same order as [`MlpModel::parameters`].
    pub gradients: Vec<f64>,
}

struct HiddenCache {
    input: Array2<f64>,
    z: Array2<f64>,
    /// Batch-norm intermediates: `(normalized, inv_std)`.
    bn: Option<(Array2<f64>, Array1<f64>)>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
}

impl MlpModel {
    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn with_batchnorm(mut self, enabled: bool) -> Self {
        let hidden = &self.layer_sizes[1..self.layer_sizes.len() - 1];
        self.batchnorm = hidden.iter().map(|&w| enabled.then(|| BatchNorm::new(w))).collect();
        self
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().expect("validated at init")
    }

    /// Flattened trainable parameters: per layer the weights (row-major)
    /// then the bias, followed by each batch norm's scale and shift.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        for bn in self.batchnorm.iter().flatten() {
            out.extend(bn.scale.iter());
            out.extend(bn.shift.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.parameters().len();
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: params.len() });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap_or_default());
            l.bias.iter_mut().for_each(|w| *w = it.next().unwrap_or_default());
        }
        for bn in self.batchnorm.iter_mut().flatten() {
            bn.scale.iter_mut().for_each(|w| *w = it.next().unwrap_or_default());
            bn.shift.iter_mut().for_each(|w| *w = it.next().unwrap_or_default());
        }
        Ok(())
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), got: x.ncols() });
        }
        Ok(())
    }

    /// Forward pass. In train mode batch norm uses batch statistics and
    /// dropout draws from `rng`; running statistics are updated only when
    /// `update_running` is set.
    fn forward<R: Rng>(
        &mut self,
        x: &Array2<f64>,
        mut rng: Option<&mut R>,
        update_running: bool,
    ) -> (Vec<HiddenCache>, Array2<f64>, Array2<f64>) {
        let train = self.mode == Mode::Train;
        let n_hidden = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(n_hidden);
        let mut a = x.clone();
        for l in 0..n_hidden {
            let layer = &self.layers[l];
            let z = a.dot(&layer.weights) + &layer.bias;
            let (pre_act, bn_cache) = match self.batchnorm[l].as_mut() {
                None => (z.clone(), None),
                Some(bn) if train => {
                    let (xhat, mean, var) = batch_normalize(&z);
                    if update_running {
                        bn.running_mean = &bn.running_mean * BN_MOMENTUM + &(mean * (1.0 - BN_MOMENTUM));
                        bn.running_var = &bn.running_var * BN_MOMENTUM + &(var.clone() * (1.0 - BN_MOMENTUM));
                    }
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    (&xhat * &bn.scale + &bn.shift, Some((xhat, inv_std)))
                }
                Some(bn) => {
                    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = (&z - &bn.running_mean) * &inv_std;
                    (&xhat * &bn.scale + &bn.shift, None)
                }
            };
            let act = pre_act.mapv(|v| self.activation.apply(v));
            let mask = match rng.as_deref_mut() {
                Some(r) if train && self.dropout_rate > 0.0 => {
                    let keep = 1.0 - self.dropout_rate;
                    Some(Array2::from_shape_simple_fn(act.raw_dim(), || {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    }))
                }
                _ => None,
            };
            let out = match &mask {
                Some(m) => &act * m,
                None => act.clone(),
            };
            caches.push(HiddenCache { input: a, z, bn: bn_cache, pre_act, act, mask });
            a = out;
        }
        let last = &self.layers[n_hidden];
        let logits = a.dot(&last.weights) + &last.bias;
        let probs = softmax(&logits);
        (caches, a, probs)
    }

    /// Class probabilities for each row (softmax output).
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut model = self.clone();
        let (_, _, probs) = model.forward::<rand_chacha::ChaCha8Rng>(x, None, false);
        Ok(probs)
    }

    pub fn predict_proba_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, row.len()), row.to_vec()).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.predict_proba(&x)?.row(0).to_vec())
    }

    /// Argmax class per row, ties to the lower index.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    /// Mean cross-entropy plus `weight_decay · ½ Σ‖W‖²` and its gradient
    /// with respect to [`MlpModel::parameters`], computed in the current
    /// mode without touching running statistics or drawing dropout masks.
    pub fn loss_and_gradients(&self, x: &Array2<f64>, labels: &[usize], weight_decay: f64) -> Result<LossAndGradients> {
        let mut model = self.clone();
        model.backprop::<rand_chacha::ChaCha8Rng>(x, labels, weight_decay, None, false)
    }

    fn backprop<R: Rng>(
        &mut self,
        x: &Array2<f64>,
        labels: &[usize],
        weight_decay: f64,
        rng: Option<&mut R>,
        update_running: bool,
    ) -> Result<LossAndGradients> {
        self.check_input(x)?;
        let n = x.nrows();
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let k = self.n_outputs();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} outputs")));
        }
        let (caches, last_input, probs) = self.forward(x, rng, update_running);

        let mut ce = 0.0;
        let mut delta = probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            ce -= probs[[i, y]].max(f64::MIN_POSITIVE).ln();
            delta[[i, y]] -= 1.0;
        }
        delta /= n as f64;
        let penalty: f64 = self.layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum();
        let loss = ce / n as f64 + 0.5 * weight_decay * penalty;

        let n_layers = self.layers.len();
        let mut grad_w: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
        let mut grad_b: Vec<Array1<f64>> = vec![Array1::zeros(0); n_layers];
        let mut grad_bn: Vec<Option<(Array1<f64>, Array1<f64>)>> = vec![None; n_layers - 1];

        let last = n_layers - 1;
        grad_w[last] = last_input.t().dot(&delta) + &(&self.layers[last].weights * weight_decay);
        grad_b[last] = delta.sum_axis(Axis(0));
        let mut upstream = delta.dot(&self.layers[last].weights.t());

        for l in (0..last).rev() {
            let c = &caches[l];
            if let Some(m) = &c.mask {
                upstream *= m;
            }
            let d_pre = Array2::from_shape_fn(c.act.raw_dim(), |(i, j)| {
                upstream[[i, j]] * self.activation.derivative(c.pre_act[[i, j]], c.act[[i, j]])
            });
            let d_z = match (&self.batchnorm[l], &c.bn) {
                (Some(bn), Some((xhat, inv_std))) => {
                    let m = n as f64;
                    grad_bn[l] = Some(((&d_pre * xhat).sum_axis(Axis(0)), d_pre.sum_axis(Axis(0))));
                    let d_xhat = &d_pre * &bn.scale;
                    let sum_d = d_xhat.sum_axis(Axis(0));
                    let sum_dx = (&d_xhat * xhat).sum_axis(Axis(0));
                    let inner = &d_xhat * m - &sum_d - &(xhat * &sum_dx);
                    inner * &(inv_std / m)
                }
                (Some(bn), None) => {
                    // Eval mode: a fixed affine map per unit.
                    let xhat = (&c.z - &bn.running_mean) * &bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    grad_bn[l] = Some(((&d_pre * &xhat).sum_axis(Axis(0)), d_pre.sum_axis(Axis(0))));
                    &d_pre * &(&bn.scale * &bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt()))
                }
                (None, _) => d_pre,
            };
            grad_w[l] = c.input.t().dot(&d_z) + &(&self.layers[l].weights * weight_decay);
            grad_b[l] = d_z.sum_axis(Axis(0));
            if l > 0 {
                upstream = d_z.dot(&self.layers[l].weights.t());
            }
        }

        let mut gradients = Vec::with_capacity(self.parameters().len());
        for l in 0..n_layers {
            gradients.extend(grad_w[l].iter());
            gradients.extend(grad_b[l].iter());
        }
        for (bn, g) in self.batchnorm.iter().zip(&grad_bn) {
            if bn.is_some() {
                let (gs, gb) = g.as_ref().expect("batch norm layers always produce gradients");
                gradients.extend(gs.iter());
                gradients.extend(gb.iter());
            }
        }
        Ok(LossAndGradients { loss, gradients })
    }
}

fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Share of the training data held out for checkpoint selection by
    /// callers that split internally.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss, in eval mode.
    pub model: MlpModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grads[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

fn eval_loss(model: &MlpModel, data: &LabeledDataset) -> Result<(f64, f64)> {
    let probs = model.predict_proba(&data.matrix)?;
    let mut ce = 0.0;
    let mut correct = 0usize;
    for (i, &y) in data.labels.iter().enumerate() {
        let row = probs.row(i);
        ce -= row[y].max(f64::MIN_POSITIVE).ln();
        correct += usize::from(argmax(row.iter().copied()) == y);
    }
    let n = data.n_rows() as f64;
    Ok((ce / n, correct as f64 / n))
}

/// Mini-batch Adam training with checkpointing on validation loss.
pub fn mlp_train(
    model: &MlpModel,
    train: &LabeledDataset,
    val: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if val.n_rows() == 0 {
        return Err(Error::invalid("validation set is empty"));
    }
    if train.n_rows() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    for ds in [train, val] {
        if ds.n_features() != model.n_inputs() {
            return Err(Error::DimensionMismatch { expected: model.n_inputs(), got: ds.n_features() });
        }
    }
    let mut rng = seeded(config.seed);
    let mut current = model.clone();
    current.set_mode(Mode::Train);
    let mut adam = Adam::new(current.parameters().len());
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = train.matrix.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let lg = current.backprop(&x, &y, config.weight_decay, Some(&mut rng), true)?;
            if !lg.loss.is_finite() || lg.gradients.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += lg.loss * chunk.len() as f64;
            let mut params = current.parameters();
            adam.step(&mut params, &lg.gradients, config.learning_rate);
            current.set_parameters(&params)?;
        }
        let mut snapshot = current.clone();
        snapshot.set_mode(Mode::Eval);
        let (val_loss, val_accuracy) = eval_loss(&snapshot, val)?;
        let (_, train_accuracy) = eval_loss(&snapshot, train)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.n_rows() as f64,
            train_accuracy,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(b, ..)| val_loss < *b) {
            best = Some((val_loss, epoch, snapshot));
        }
    }
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => {
            let mut m = model.clone();
            m.set_mode(Mode::Eval);
            (0, m)
        }
    };
    Ok(TrainOutcome { model, best_epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn blobs(n_per: usize, seed: u64, dim: usize) -> LabeledDataset {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 2 * n_per;
        let labels: Vec<usize> = (0..n).map(|i| i / n_per).collect();
        let x = Array2::from_shape_fn((n, dim), |(i, _)| {
            let center = if labels[i] == 0 { -2.5 } else { 2.5 };
            center + noise.sample(&mut rng)
        });
        LabeledDataset::binary(x, labels).unwrap()
    }

    fn sample_std(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn kaiming_statistics() {
        let mut w = Vec::new();
        for seed in 0..10 {
            let m = mlp_init(&[40, 2], Activation::Relu, seed).unwrap();
            w.extend(m.layers[0].weights.iter().copied());
            assert!(m.layers[0].bias.iter().all(|&b| b == 0.0));
        }
        let expected = (2.0f64 / 40.0).sqrt();
        assert!((sample_std(&w) - expected).abs() / expected < 0.15);
    }

    #[test]
    fn xavier_statistics() {
        let mut w = Vec::new();
        for seed in 0..10 {
            let m = mlp_init(&[40, 20], Activation::Sigmoid, seed).unwrap();
            w.extend(m.layers[0].weights.iter().copied());
        }
        let bound = (6.0f64 / 60.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        let expected = bound / 3f64.sqrt();
        assert!((sample_std(&w) - expected).abs() / expected < 0.15);
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!(mlp_init(&[3, 0, 2], Activation::Relu, 0).is_err());
        assert!(mlp_init(&[3], Activation::Relu, 0).is_err());
        assert!(mlp_init(&[3, 2], Activation::Relu, 0).unwrap().with_dropout(1.0).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = mlp_init(&[3, 5, 4], Activation::Relu, 1).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - 2.0) * (j as f64 + 0.5) * 10.0);
        for row in m.predict_proba(&x).unwrap().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    fn finite_difference_error(model: &MlpModel, x: &Array2<f64>, y: &[usize], wd: f64) -> f64 {
        let analytic = model.loss_and_gradients(x, y, wd).unwrap().gradients;
        let base = model.parameters();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss_and_gradients(x, y, wd).unwrap().loss;
            p[i] = base[i] - h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss_and_gradients(x, y, wd).unwrap().loss;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = blobs(6, 3, 4);
        for act in [Activation::Relu, Activation::Sigmoid] {
            let m = mlp_init(&[4, 6, 5, 2], act, 7).unwrap();
            let err = finite_difference_error(&m, &data.matrix, &data.labels, 1e-2);
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let data = blobs(5, 4, 3);
        let m = mlp_init(&[3, 4, 2], Activation::Sigmoid, 2).unwrap().with_batchnorm(true);
        let err = finite_difference_error(&m, &data.matrix, &data.labels, 0.0);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn batch_normalize_moments() {
        let mut rng = seeded(5);
        let z = Array2::from_shape_fn((64, 7), |(_, j)| 3.0 * j as f64 + 4.0 * (1.0 + j as f64) * rng.random::<f64>());
        let (xhat, ..) = batch_normalize(&z);
        for col in xhat.columns() {
            let mean = col.sum() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = blobs(20, 1, 3);
        let m = mlp_init(&[3, 8, 2], Activation::Relu, 4).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 8, ..Default::default() };
        let out = mlp_train(&m, &data, &data, &cfg).unwrap();
        assert_eq!(out.model.parameters(), m.parameters());
    }

    #[test]
    fn learns_separable_blobs() {
        let train = blobs(100, 11, 5);
        let val = blobs(50, 12, 5);
        let m = mlp_init(&[5, 40, 2], Activation::Relu, 3).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 200, batch_size: 32, seed: 9, ..Default::default() };
        let out = mlp_train(&m, &train, &val, &cfg).unwrap();
        let best = &out.history[out.best_epoch - 1];
        assert!(best.val_accuracy >= 0.98, "{}", best.val_accuracy);
        assert_eq!(out.model.mode, Mode::Eval);
    }

    #[test]
    fn dropout_and_batchnorm_train_deterministically() {
        let train = blobs(30, 2, 3);
        let m = mlp_init(&[3, 10, 2], Activation::Relu, 0).unwrap().with_dropout(0.5).unwrap().with_batchnorm(true);
        let cfg = TrainConfig { epochs: 5, batch_size: 16, seed: 1, ..Default::default() };
        let a = mlp_train(&m, &train, &train, &cfg).unwrap();
        let b = mlp_train(&m, &train, &train, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let p1 = a.model.predict_proba(&train.matrix).unwrap();
        let p2 = a.model.predict_proba(&train.matrix).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn divergence_reports_epoch() {
        let train = blobs(10, 2, 2);
        let mut m = mlp_init(&[2, 4, 2], Activation::Relu, 0).unwrap();
        let mut p = m.parameters();
        p[0] = f64::NAN;
        m.set_parameters(&p).unwrap();
        let err = mlp_train(&m, &train, &train, &TrainConfig { epochs: 2, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1 }));
    }
}
