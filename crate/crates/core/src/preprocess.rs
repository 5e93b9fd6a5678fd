//! Z-score standardization and covariance PCA.
//!
//! All statistics use the population (1/N) convention.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::hexfloat;
use crate::{Error, Result};

/// Per-column mean and standard deviation. Zero-variance columns store a
/// standard deviation of 1 so they map to all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    #[serde(with = "hexfloat::vec")]
    pub mean: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub std: Vec<f64>,
}

pub fn fit_scaler(matrix: &Array2<f64>) -> Result<ScalerParams> {
    let n = matrix.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot fit a scaler on zero rows"));
    }
    let mut mean = Vec::with_capacity(matrix.ncols());
    let mut std = Vec::with_capacity(matrix.ncols());
    for col in matrix.axis_iter(Axis(1)) {
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        mean.push(m);
        std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
    }
    Ok(ScalerParams { mean, std })
}

impl ScalerParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        if matrix.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: matrix.ncols() });
        }
        let mut out = matrix.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: row.len() });
        }
        Ok(row.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect())
    }
}

pub fn transform_scaler(params: &ScalerParams, matrix: &Array2<f64>) -> Result<Array2<f64>> {
    params.transform(matrix)
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending, eigenvectors
/// as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps rotate every off-diagonal pair until the off-diagonal Frobenius
/// norm drops below `1e-12 · max(1, ‖S‖_F)`. Each eigenvector's
/// largest-magnitude entry is made positive.
pub fn sym_eig(s: &Array2<f64>) -> Result<SymEigen> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: s.ncols() });
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((s[[i, j]] - s[[j, i]]).abs());
        }
    }
    if !(asym < 1e-10) {
        return Err(Error::invalid(format!("matrix is not symmetric (max |S - Sᵀ| = {asym:e})")));
    }

    // Row-major working copies.
    let mut a: Vec<f64> = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (s[[i, j]] + s[[j, i]]);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-12 * fro.max(1.0);
    let off_norm = |a: &[f64]| {
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += a[i * n + j] * a[i * n + j];
                }
            }
        }
        sum.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) >= target {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical(format!("Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| a[i * n + i]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for k in 0..n {
            if v[k * n + src].abs() > v[pivot * n + src].abs() {
                pivot = k;
            }
        }
        let sign = if v[pivot * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[[k, dst]] = sign * v[k * n + src];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Population covariance (1/N) of the columns.
pub fn covariance(matrix: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if n == 0 {
        return Err(Error::invalid("covariance of zero rows"));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("non-empty");
    let centered = matrix - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    Ok((mean.to_vec(), cov))
}

/// Principal axes of a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    #[serde(with = "hexfloat::vec")]
    pub mean: Vec<f64>,
    /// D × K, orthonormal columns.
    #[serde(with = "hexfloat::matrix")]
    pub components: Array2<f64>,
    #[serde(with = "hexfloat::vec")]
    pub eigenvalues: Vec<f64>,
    #[serde(with = "hexfloat::scalar")]
    pub energy_captured: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    /// `(X − mean) · components`.
    pub fn project(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        if matrix.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: matrix.ncols() });
        }
        let mean = ArrayView1::from(&self.mean);
        Ok((matrix - &mean).dot(&self.components))
    }

    pub fn project_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: row.len() });
        }
        let centered: Array1<f64> = row.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(centered.dot(&self.components).to_vec())
    }

    /// Maps scores back to the input space: `Y · componentsᵀ + mean`.
    pub fn reconstruct(&self, scores: &Array2<f64>) -> Result<Array2<f64>> {
        if scores.ncols() != self.n_components() {
            return Err(Error::DimensionMismatch { expected: self.n_components(), got: scores.ncols() });
        }
        Ok(scores.dot(&self.components.t()) + ArrayView1::from(&self.mean))
    }
}

pub fn project(model: &PcaModel, matrix: &Array2<f64>) -> Result<Array2<f64>> {
    model.project(matrix)
}

struct Spectrum {
    mean: Vec<f64>,
    values: Vec<f64>,
    vectors: Array2<f64>,
    total: f64,
}

fn spectrum(matrix: &Array2<f64>) -> Result<Spectrum> {
    if matrix.nrows() < 2 {
        return Err(Error::invalid("PCA needs at least 2 rows"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input has non-finite cells"));
    }
    let (mean, cov) = covariance(matrix)?;
    let eig = sym_eig(&cov)?;
    let values: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let total = values.iter().sum();
    Ok(Spectrum { mean, values, vectors: eig.vectors, total })
}

fn truncate(s: Spectrum, k: usize) -> PcaModel {
    let captured: f64 = s.values[..k].iter().sum();
    let energy_captured = if s.total > 0.0 { (captured / s.total).min(1.0) } else { 1.0 };
    PcaModel {
        mean: s.mean,
        components: s.vectors.slice(ndarray::s![.., ..k]).to_owned(),
        eigenvalues: s.values[..k].to_vec(),
        energy_captured,
    }
}

/// Keeps the smallest K whose cumulative eigenvalue fraction reaches `energy`.
pub fn fit_pca(matrix: &Array2<f64>, energy: f64) -> Result<PcaModel> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::invalid(format!("energy must lie in (0, 1], got {energy}")));
    }
    let s = spectrum(matrix)?;
    let d = s.values.len();
    let k = if s.total > 0.0 {
        let mut cum = 0.0;
        let mut k = d;
        for (i, l) in s.values.iter().enumerate() {
            cum += l;
            if cum / s.total >= energy - 1e-12 {
                k = i + 1;
                break;
            }
        }
        k
    } else {
        1
    };
    Ok(truncate(s, k.max(1)))
}

/// PCA with a fixed number of components.
pub fn fit_pca_k(matrix: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let s = spectrum(matrix)?;
    if k == 0 || k > s.values.len() {
        return Err(Error::invalid(format!("k must lie in 1..={}, got {k}", s.values.len())));
    }
    Ok(truncate(s, k))
}
