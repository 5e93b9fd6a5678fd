//! Closed-form ridge regression.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::hexfloat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    #[serde(with = "hexfloat::array1")]
    pub coefficients: Array1<f64>,
    #[serde(with = "hexfloat::scalar")]
    pub intercept: f64,
    #[serde(with = "hexfloat::scalar")]
    pub alpha: f64,
}

/// In-place Cholesky factorization `A = L Lᵀ`; returns `L` in the lower
/// triangle.
fn cholesky(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let scale = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d <= 1e-13 * scale {
            return Err(Error::Numerical(format!("ridge system is singular at column {j}")));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / d;
        }
        for i in 0..j {
            a[[i, j]] = 0.0;
        }
    }
    Ok(a)
}

fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[[i, k]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[[k, i]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    y
}

/// Solves `(XcᵀXc + αI) β = Xcᵀyc` on centered data; the intercept restores
/// the means.
pub fn ridge_fit(x: &Array2<f64>, y: &[f64], alpha: f64) -> Result<RidgeModel> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n == 0 {
        return Err(Error::invalid("ridge needs at least one row"));
    }
    let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let y_arr = Array1::from(y.to_vec());
    let y_mean = y_arr.sum() / n as f64;
    let xc = x - &x_mean;
    let yc = &y_arr - y_mean;
    let mut gram = xc.t().dot(&xc);
    gram.diag_mut().mapv_inplace(|v| v + alpha);
    let l = cholesky(gram)?;
    let coefficients = cholesky_solve(&l, &xc.t().dot(&yc));
    let intercept = y_mean - x_mean.dot(&coefficients);
    Ok(RidgeModel { coefficients, intercept, alpha })
}

impl RidgeModel {
    pub fn predict(&self, row: ArrayView1<f64>) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch { expected: self.coefficients.len(), got: row.len() });
        }
        Ok(row.dot(&self.coefficients) + self.intercept)
    }

    pub fn predict_all(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.predict(r)).collect()
    }
}
