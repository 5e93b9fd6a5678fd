//! Soft-margin kernel SVM trained by sequential minimal optimization.
//!
//! The solver works on the dual `min ½αᵀQα − eᵀα`, `0 ≤ α ≤ C`, `yᵀα = 0`
//! with `Q_ij = y_i y_j K(x_i, x_j)`, updating the maximal violating pair
//! each iteration until the KKT gap falls below `tol`.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::hexfloat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Poly {
        degree: u32,
        #[serde(with = "hexfloat::scalar")]
        gamma: f64,
        #[serde(with = "hexfloat::scalar")]
        coef0: f64,
    },
    Rbf {
        #[serde(with = "hexfloat::scalar")]
        gamma: f64,
    },
    Sigmoid {
        #[serde(with = "hexfloat::scalar")]
        gamma: f64,
        #[serde(with = "hexfloat::scalar")]
        coef0: f64,
    },
}

impl Kernel {
    /// Polynomial kernel with `γ = 1/D`, `r = 1`.
    pub fn poly(degree: u32, dim: usize) -> Self {
        Kernel::Poly { degree, gamma: 1.0 / dim.max(1) as f64, coef0: 1.0 }
    }

    /// RBF kernel with `γ = 1/D`.
    pub fn rbf(dim: usize) -> Self {
        Kernel::Rbf { gamma: 1.0 / dim.max(1) as f64 }
    }

    /// Sigmoid kernel with `γ = 1/D`, `r = 0`.
    pub fn sigmoid(dim: usize) -> Self {
        Kernel::Sigmoid { gamma: 1.0 / dim.max(1) as f64, coef0: 0.0 }
    }

    pub fn name(&self) -> String {
        match self {
            Kernel::Linear => "linear".into(),
            Kernel::Poly { degree, .. } => format!("poly{degree}"),
            Kernel::Rbf { .. } => "rbf".into(),
            Kernel::Sigmoid { .. } => "sigmoid".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gamma = match self {
            Kernel::Linear => return Ok(()),
            Kernel::Poly { gamma, degree, .. } => {
                if *degree == 0 {
                    return Err(Error::invalid("polynomial degree must be >= 1"));
                }
                *gamma
            }
            Kernel::Rbf { gamma } | Kernel::Sigmoid { gamma, .. } => *gamma,
        };
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("kernel gamma must be positive, got {gamma}")));
        }
        Ok(())
    }

    /// Kernel value; callers guarantee equal lengths.
    pub fn eval(&self, x: ArrayView1<f64>, z: ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Linear => x.dot(&z),
            Kernel::Poly { degree, gamma, coef0 } => (gamma * x.dot(&z) + coef0).powi(degree as i32),
            Kernel::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Sigmoid { gamma, coef0 } => (gamma * x.dot(&z) + coef0).tanh(),
        }
    }
}

/// Checked kernel evaluation.
pub fn kernel_eval(kernel: &Kernel, x: &[f64], z: &[f64]) -> Result<f64> {
    kernel.validate()?;
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: z.len() });
    }
    Ok(kernel.eval(ArrayView1::from(x), ArrayView1::from(z)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    pub tol: f64,
    /// `None` uses `max(10⁶, 100·n)`.
    pub max_iter: Option<usize>,
}

impl SvmParams {
    pub fn new(kernel: Kernel, c: f64) -> Self {
        Self { kernel, c, tol: 1e-3, max_iter: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    #[serde(with = "hexfloat::scalar")]
    pub c: f64,
    #[serde(with = "hexfloat::matrix")]
    pub support_vectors: Array2<f64>,
    /// `α_i · y_i` per support vector.
    #[serde(with = "hexfloat::vec")]
    pub dual_coefs: Vec<f64>,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    #[serde(with = "hexfloat::scalar")]
    pub bias: f64,
    pub n_features: usize,
    pub converged: bool,
    pub iterations: usize,
}

const SUPPORT_EPS: f64 = 1e-8;
const TAU: f64 = 1e-12;
const FULL_KERNEL_LIMIT: usize = 4000;

/// Rows of `K`, either precomputed or evaluated on demand.
enum KernelRows<'a> {
    Full(Vec<f64>),
    Lazy { x: &'a Array2<f64>, kernel: Kernel },
}

impl KernelRows<'_> {
    fn row(&self, n: usize, i: usize) -> std::borrow::Cow<'_, [f64]> {
        match self {
            KernelRows::Full(k) => std::borrow::Cow::Borrowed(&k[i * n..(i + 1) * n]),
            KernelRows::Lazy { x, kernel } => {
                std::borrow::Cow::Owned(x.axis_iter(Axis(0)).map(|z| kernel.eval(x.row(i), z)).collect())
            }
        }
    }
}

/// Trains on labels `y ∈ {−1, +1}`.
pub fn svm_fit(x: &Array2<f64>, y: &[f64], params: &SvmParams) -> Result<SvmModel> {
    params.kernel.validate()?;
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if !(params.c > 0.0) || !params.c.is_finite() {
        return Err(Error::invalid(format!("C must be positive, got {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid(format!("SVM labels must be ±1, got {bad}")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::invalid("SVM training needs both classes present"));
    }
    let c = params.c;
    let max_iter = params.max_iter.unwrap_or_else(|| (100 * n).max(1_000_000));

    let diag: Vec<f64> = (0..n).map(|i| params.kernel.eval(x.row(i), x.row(i))).collect();
    let rows = if n <= FULL_KERNEL_LIMIT {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = params.kernel.eval(x.row(i), x.row(j));
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        KernelRows::Full(k)
    } else {
        KernelRows::Lazy { x, kernel: params.kernel }
    };

    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < params.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let ki = rows.row(n, i);
        let kj = rows.row(n, j);
        let q_ij = y[i] * y[j] * ki[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (diag[i] + diag[j] + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tol {}", params.tol);
    }

    // ρ from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };

    let support_indices: Vec<usize> = (0..n).filter(|&t| alpha[t] > SUPPORT_EPS).collect();
    Ok(SvmModel {
        kernel: params.kernel,
        c,
        support_vectors: x.select(Axis(0), &support_indices),
        dual_coefs: support_indices.iter().map(|&t| alpha[t] * y[t]).collect(),
        support_indices,
        bias: -rho,
        n_features: d,
        converged,
        iterations,
    })
}

/// Maps a binary dataset onto ±1 (`positive_class` → +1) and trains.
pub fn svm_fit_dataset(dataset: &LabeledDataset, positive_class: usize, params: &SvmParams) -> Result<SvmModel> {
    let y: Vec<f64> = dataset.labels.iter().map(|&l| if l == positive_class { 1.0 } else { -1.0 }).collect();
    svm_fit(&dataset.matrix, &y, params)
}

impl SvmModel {
    /// `f(x) = Σ α_i y_i K(x_i, x) + b`.
    pub fn decision(&self, row: ArrayView1<f64>) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: row.len() });
        }
        let sum: f64 = self
            .support_vectors
            .axis_iter(Axis(0))
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * self.kernel.eval(sv, row))
            .sum();
        Ok(sum + self.bias)
    }

    /// `sign(f(x))`, with `f = 0` mapped to `+1`.
    pub fn predict(&self, row: ArrayView1<f64>) -> Result<f64> {
        Ok(if self.decision(row)? >= 0.0 { 1.0 } else { -1.0 })
    }

    /// Logistic squashing of the decision value. Reporting only; it is not a
    /// calibrated probability.
    pub fn pseudo_probability(&self, row: ArrayView1<f64>) -> Result<f64> {
        Ok(1.0 / (1.0 + (-self.decision(row)?).exp()))
    }
}

pub fn svm_decision(model: &SvmModel, row: &[f64]) -> Result<f64> {
    model.decision(ArrayView1::from(row))
}

pub fn svm_predict(model: &SvmModel, row: &[f64]) -> Result<f64> {
    model.predict(ArrayView1::from(row))
}
