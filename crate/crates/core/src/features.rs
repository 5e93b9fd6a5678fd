//! Descriptor-space reduction: low-information filtering, pairwise
//! correlation pruning and LASSO embedded selection.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;

use crate::dataset::DescriptorTable;
use crate::preprocess::fit_scaler;
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    Missing,
    Constant,
    CorrelatedWith(String),
    LassoZero,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::Missing => f.write_str("missing"),
            DropReason::Constant => f.write_str("constant"),
            DropReason::CorrelatedWith(other) => write!(f, "correlated-with:{other}"),
            DropReason::LassoZero => f.write_str("lasso-zero"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureFilterReport {
    pub kept: Vec<String>,
    pub dropped: Vec<(String, DropReason)>,
}

impl FeatureFilterReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for k in &self.kept {
            out.push_str(&format!("{k}\tkept\t\n"));
        }
        for (name, why) in &self.dropped {
            out.push_str(&format!("{name}\tdropped\t{why}\n"));
        }
        out
    }
}

/// Result of [`filter_low_information`]: the report plus the surviving
/// columns with missing cells mean-imputed.
#[derive(Debug, Clone)]
pub struct LowInformationFilter {
    pub report: FeatureFilterReport,
    pub matrix: Array2<f64>,
}

/// Drops columns with more than `max_missing` missing cells or more than
/// `max_constant` repeats of their modal value, then mean-imputes the rest.
pub fn filter_low_information(
    table: &DescriptorTable,
    max_missing: usize,
    max_constant: usize,
) -> Result<LowInformationFilter> {
    let n = table.n_rows();
    if max_missing > n || max_constant > n {
        return Err(Error::Precondition(format!("thresholds ({max_missing}, {max_constant}) exceed row count {n}")));
    }
    let mut report = FeatureFilterReport::default();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (j, name) in table.feature_names.iter().enumerate() {
        let present: Vec<f64> = table.values.iter().filter_map(|row| row[j]).collect();
        let missing = n - present.len();
        if missing > max_missing {
            report.dropped.push((name.clone(), DropReason::Missing));
            continue;
        }
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for v in &present {
            // +0.0 and −0.0 count as the same value.
            *counts.entry((v + 0.0).to_bits()).or_default() += 1;
        }
        let modal = counts.values().copied().max().unwrap_or(0);
        if modal > max_constant {
            report.dropped.push((name.clone(), DropReason::Constant));
            continue;
        }
        let fill = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
        columns.push(table.values.iter().map(|row| row[j].unwrap_or(fill)).collect());
        report.kept.push(name.clone());
    }
    let mut matrix = Array2::zeros((n, columns.len()));
    for (j, col) in columns.iter().enumerate() {
        matrix.column_mut(j).assign(&ArrayView1::from(col));
    }
    Ok(LowInformationFilter { report, matrix })
}

fn centered_unit(col: ArrayView1<f64>) -> Option<Array1<f64>> {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let c = col.mapv(|v| v - mean);
    let norm = c.dot(&c).sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| c / norm)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    Some(centered_unit(a)?.dot(&centered_unit(b)?))
}

/// Greedy pairwise-correlation pruning.
///
/// Pairs with `|r| > cutoff` are visited in descending `|r|` (name order
/// breaks ties); if both members are still alive, the one less correlated
/// with `target` is dropped (ties drop the lexicographically larger name).
pub fn correlation_filter(
    matrix: &Array2<f64>,
    names: &[String],
    target: &[f64],
    cutoff: f64,
) -> Result<FeatureFilterReport> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::Precondition(format!("cutoff must lie in (0, 1), got {cutoff}")));
    }
    if names.len() != matrix.ncols() {
        return Err(Error::DimensionMismatch { expected: matrix.ncols(), got: names.len() });
    }
    if target.len() != matrix.nrows() {
        return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: target.len() });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("correlation filter input has missing cells".into()));
    }

    let d = matrix.ncols();
    let units: Vec<Option<Array1<f64>>> = matrix.axis_iter(Axis(1)).map(centered_unit).collect();
    let target_unit = centered_unit(ArrayView1::from(target));
    let relevance: Vec<f64> = units
        .iter()
        .map(|u| match (u, &target_unit) {
            (Some(u), Some(t)) => u.dot(t).abs(),
            _ => 0.0,
        })
        .collect();

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..d {
        let Some(ua) = &units[a] else { continue };
        for b in (a + 1)..d {
            let Some(ub) = &units[b] else { continue };
            let r = ua.dot(ub).abs();
            if r > cutoff {
                let (x, y) = if names[a] <= names[b] { (a, b) } else { (b, a) };
                pairs.push((r, x, y));
            }
        }
    }
    pairs.sort_by(|p, q| {
        q.0.total_cmp(&p.0).then_with(|| names[p.1].cmp(&names[q.1])).then_with(|| names[p.2].cmp(&names[q.2]))
    });

    let mut dropped_by: Vec<Option<usize>> = vec![None; d];
    for (_, a, b) in pairs {
        if dropped_by[a].is_some() || dropped_by[b].is_some() {
            continue;
        }
        let (loser, winner) = match relevance[a].total_cmp(&relevance[b]) {
            std::cmp::Ordering::Less => (a, b),
            std::cmp::Ordering::Greater => (b, a),
            // a sorts before b by name, so b is dropped.
            std::cmp::Ordering::Equal => (b, a),
        };
        dropped_by[loser] = Some(winner);
    }

    let mut report = FeatureFilterReport::default();
    for (j, name) in names.iter().enumerate() {
        match dropped_by[j] {
            Some(w) => report.dropped.push((name.clone(), DropReason::CorrelatedWith(names[w].clone()))),
            None => report.kept.push(name.clone()),
        }
    }
    Ok(report)
}

/// Solution of the ℓ1-penalized least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Column indices with a nonzero coefficient.
    pub selected: Vec<usize>,
    pub sweeps: usize,
    pub converged: bool,
}

const LASSO_MAX_SWEEPS: usize = 10_000;
const LASSO_COEF_TOL: f64 = 1e-8;
const LASSO_KKT_TOL: f64 = 1e-6;
const STANDARDIZED_MEAN_TOL: f64 = 1e-6;

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

impl LassoFit {
    pub fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        x.dot(&ArrayView1::from(&self.coefficients)) + self.intercept
    }

    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b.abs()).sum()
    }

    /// Largest violation of the optimality conditions on `(x, y)`.
    pub fn kkt_residual(&self, x: &Array2<f64>, y: &[f64]) -> f64 {
        let n = x.nrows() as f64;
        let residual = ArrayView1::from(y).to_owned() - self.predict(x);
        x.axis_iter(Axis(1))
            .zip(&self.coefficients)
            .map(|(col, &b)| {
                let g = col.dot(&residual) / n;
                if b != 0.0 {
                    (g - self.lambda * b.signum()).abs()
                } else {
                    (g.abs() - self.lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn selected_names(&self, names: &[String]) -> Vec<String> {
        self.selected.iter().map(|&j| names[j].clone()).collect()
    }
}

/// Cyclic coordinate descent for
/// `(1/2n)‖y − Xβ − b‖² + λ‖β‖₁` on column-centered `X`.
pub fn lasso_fit(x: &Array2<f64>, y: &[f64], lambda: f64) -> Result<LassoFit> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n == 0 {
        return Err(Error::invalid("LASSO on zero rows"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = col.sum() / n as f64;
        if !(m.abs() <= STANDARDIZED_MEAN_TOL) {
            return Err(Error::Precondition(format!("column {j} is not standardized (mean {m:e})")));
        }
    }

    let nf = n as f64;
    let col_sq: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.dot(&c) / nf).collect();
    let mut beta = vec![0.0; d];
    let mut intercept = y.iter().sum::<f64>() / nf;
    let mut residual: Array1<f64> = y.iter().map(|v| v - intercept).collect();

    let mut fit =
        LassoFit { coefficients: Vec::new(), intercept, lambda, selected: Vec::new(), sweeps: 0, converged: false };
    while fit.sweeps < LASSO_MAX_SWEEPS {
        fit.sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let rho = col.dot(&residual) / nf + col_sq[j] * beta[j];
            let updated = soft_threshold(rho, lambda) / col_sq[j];
            let delta = updated - beta[j];
            if delta != 0.0 {
                residual.scaled_add(-delta, &col);
                beta[j] = updated;
                max_change = max_change.max(delta.abs());
            }
        }
        let shift = residual.sum() / nf;
        if shift != 0.0 {
            intercept += shift;
            residual.mapv_inplace(|r| r - shift);
            max_change = max_change.max(shift.abs());
        }
        if max_change < LASSO_COEF_TOL {
            fit.coefficients.clone_from(&beta);
            fit.intercept = intercept;
            if fit.kkt_residual(x, y) <= LASSO_KKT_TOL {
                fit.converged = true;
                break;
            }
        }
    }
    fit.coefficients = beta;
    fit.intercept = intercept;
    fit.selected = (0..d).filter(|&j| fit.coefficients[j] != 0.0).collect();
    if !fit.converged {
        log::warn!("LASSO (lambda={lambda}) hit the sweep limit without converging");
    }
    Ok(fit)
}

/// `max_j |x_jᵀ(y − ȳ)| / n`: the smallest λ giving the all-zero solution.
pub fn lambda_max(x: &Array2<f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let yc: Array1<f64> = y.iter().map(|v| v - mean).collect();
    x.axis_iter(Axis(1)).map(|c| (c.dot(&yc) / n).abs()).fold(0.0, f64::max)
}

/// LASSO selection expressed as a filter report over `names`.
pub fn lasso_select(
    x: &Array2<f64>,
    y: &[f64],
    names: &[String],
    lambda: f64,
) -> Result<(LassoFit, FeatureFilterReport)> {
    if names.len() != x.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), got: names.len() });
    }
    let fit = lasso_fit(x, y, lambda)?;
    let mut report = FeatureFilterReport::default();
    for (j, name) in names.iter().enumerate() {
        if fit.coefficients[j] != 0.0 {
            report.kept.push(name.clone());
        } else {
            report.dropped.push((name.clone(), DropReason::LassoZero));
        }
    }
    Ok((fit, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    /// `(λ, validation MSE)` in grid order.
    pub validation_mse: Vec<(f64, f64)>,
}

/// Picks λ by validation MSE on a seeded random holdout. The training part
/// is re-standardized and the same transform is applied to the holdout.
pub fn lambda_grid_search(
    x: &Array2<f64>,
    y: &[f64],
    grid: &[f64],
    holdout_fraction: f64,
    seed: u64,
) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Precondition(format!("holdout fraction must lie in (0, 1), got {holdout_fraction}")));
    }
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let n_val = ((holdout_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::invalid("need at least 2 rows for a validation split"));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut seeded(seed));
    let (val_rows, train_rows) = rows.split_at(n_val);

    let x_train_raw = x.select(Axis(0), train_rows);
    let scaler = fit_scaler(&x_train_raw)?;
    let x_train = scaler.transform(&x_train_raw)?;
    let x_val = scaler.transform(&x.select(Axis(0), val_rows))?;
    let y_train: Vec<f64> = train_rows.iter().map(|&r| y[r]).collect();
    let y_val: Vec<f64> = val_rows.iter().map(|&r| y[r]).collect();

    let mut validation_mse = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let fit = lasso_fit(&x_train, &y_train, lambda)?;
        let pred = fit.predict(&x_val);
        let mse = pred.iter().zip(&y_val).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y_val.len() as f64;
        validation_mse.push((lambda, mse));
        let better = match best {
            None => true,
            Some((bl, bm)) => mse < bm || (mse == bm && lambda < bl),
        };
        if better {
            best = Some((lambda, mse));
        }
    }
    Ok(LambdaSearch { best_lambda: best.expect("grid non-empty").0, validation_mse })
}

/// Population variance per column, sorted by variance (descending) then name.
pub fn variance_report(matrix: &Array2<f64>, names: &[String]) -> Result<Vec<(String, f64)>> {
    if names.len() != matrix.ncols() {
        return Err(Error::DimensionMismatch { expected: matrix.ncols(), got: names.len() });
    }
    let n = matrix.nrows() as f64;
    let mut out: Vec<(String, f64)> = matrix
        .axis_iter(Axis(1))
        .zip(names)
        .map(|(col, name)| {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (name.clone(), var)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Feature whitelist: one name per line, `#` starts a comment.
pub fn parse_whitelist<R: Read>(reader: R) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if !content.is_empty() {
            names.push(content.to_owned());
        }
    }
    Ok(names)
}
