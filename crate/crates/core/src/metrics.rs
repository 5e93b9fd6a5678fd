//! Classification and regression statistics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fn_: u64, tn: u64, fp: u64) -> Self {
        Self { tp, fn_, tn, fp }
    }

    /// Counts from paired truth/prediction flags (`true` = positive).
    pub fn from_flags(truth: &[bool], predicted: &[bool]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), got: predicted.len() });
        }
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub ac: f64,
    pub sn: f64,
    pub sp: f64,
    pub precision: f64,
    /// Harmonic mean of precision and sensitivity.
    pub f1: f64,
    /// Harmonic mean of sensitivity and specificity.
    pub f1_balanced: f64,
    pub ccr: f64,
    pub mcc: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Every binary statistic from one confusion table. Rates with an empty
/// denominator are reported as 0, as is MCC when any marginal is empty.
pub fn binary_metrics(c: &ConfusionCounts) -> Result<BinaryMetrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("confusion counts are all zero"));
    }
    let sn = ratio(c.tp, c.tp + c.fn_);
    let sp = ratio(c.tn, c.tn + c.fp);
    let precision = ratio(c.tp, c.tp + c.fp);
    let (tp, fn_, tn, fp) = (c.tp as f64, c.fn_ as f64, c.tn as f64, c.fp as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den.sqrt() };
    Ok(BinaryMetrics {
        ac: ratio(c.tp + c.tn, total),
        sn,
        sp,
        precision,
        f1: harmonic(precision, sn),
        f1_balanced: harmonic(sn, sp),
        ccr: (sn + sp) / 2.0,
        mcc,
    })
}

/// Rows are true classes, columns predicted classes; inconclusive
/// predictions are tallied separately per true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassConfusion {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub inconclusive: Vec<u64>,
}

impl MulticlassConfusion {
    pub fn from_predictions(class_names: Vec<String>, truths: &[usize], predictions: &[Option<usize>]) -> Result<Self> {
        if truths.len() != predictions.len() {
            return Err(Error::DimensionMismatch { expected: truths.len(), got: predictions.len() });
        }
        let k = class_names.len();
        let mut counts = vec![vec![0u64; k]; k];
        let mut inconclusive = vec![0u64; k];
        for (&t, p) in truths.iter().zip(predictions) {
            if t >= k || p.is_some_and(|p| p >= k) {
                return Err(Error::invalid(format!("label out of range for {k} classes")));
            }
            match p {
                Some(p) => counts[t][*p] += 1,
                None => inconclusive[t] += 1,
            }
        }
        Ok(Self { class_names, counts, inconclusive })
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        let total: u64 = self.counts.iter().flatten().sum::<u64>() + self.inconclusive.iter().sum::<u64>();
        ratio(trace, total)
    }

    pub fn has_inconclusive(&self) -> bool {
        self.inconclusive.iter().any(|&c| c > 0)
    }

    /// Tab-separated matrix with a header row of predicted classes.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("truth\\predicted");
        for name in &self.class_names {
            out.push('\t');
            out.push_str(name);
        }
        let show_inc = self.has_inconclusive();
        if show_inc {
            out.push_str("\tinconclusive");
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&self.class_names[i]);
            for v in row {
                out.push_str(&format!("\t{v}"));
            }
            if show_inc {
                out.push_str(&format!("\t{}", self.inconclusive[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Fraction of exact matches; `None` (inconclusive) never matches.
pub fn multiclass_accuracy(predictions: &[Option<usize>], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), got: predictions.len() });
    }
    if truths.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| **p == Some(**t)).count();
    Ok(hits as f64 / truths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    pub mse: f64,
    /// `None` when the targets have zero variance.
    pub r2: Option<f64>,
}

impl RegressionMetrics {
    pub fn r2(&self) -> Result<f64> {
        self.r2.ok_or_else(|| Error::Undefined("R² is undefined for a constant target".into()))
    }
}

pub fn regression_metrics(y: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    if y.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: predicted.len() });
    }
    if y.len() < 2 {
        return Err(Error::invalid("regression metrics need at least two rows"));
    }
    let n = y.len() as f64;
    let ss_res: f64 = y.iter().zip(predicted).map(|(a, b)| (a - b) * (a - b)).sum();
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok(RegressionMetrics { mse: ss_res / n, r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot) })
}

/// Mean of per-fold scores.
pub fn cv_estimate(fold_scores: &[f64]) -> Result<f64> {
    if fold_scores.is_empty() {
        return Err(Error::invalid("no fold scores"));
    }
    Ok(fold_scores.iter().sum::<f64>() / fold_scores.len() as f64)
}

/// Percentage with one decimal, rounding half to even. Values within 1e-9
/// of a tie count as ties so that binary noise in e.g. 0.8685 does not
/// decide the digit.
pub fn format_percent(fraction: f64) -> String {
    let scaled = fraction * 1000.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let rounded = if (frac - 0.5).abs() <= 1e-9 * scaled.abs().max(1.0) {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    format!("{:.1}", rounded / 10.0)
}

/// One labelled row of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub counts: ConfusionCounts,
    pub metrics: BinaryMetrics,
    pub multiclass_accuracy: Option<f64>,
}

impl ReportRow {
    pub fn new(name: impl Into<String>, counts: ConfusionCounts, multiclass_accuracy: Option<f64>) -> Result<Self> {
        Ok(Self { name: name.into(), counts, metrics: binary_metrics(&counts)?, multiclass_accuracy })
    }

    fn cells(&self) -> Vec<String> {
        let m = &self.metrics;
        let c = &self.counts;
        let mut cells = vec![
            self.name.clone(),
            format_percent(m.ac),
            format_percent(m.sn),
            format_percent(m.sp),
            format_percent(m.f1),
            c.tp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            format_percent(m.ccr),
            format_percent(m.mcc),
            format_percent(m.f1_balanced),
        ];
        cells.push(self.multiclass_accuracy.map(format_percent).unwrap_or_default());
        cells
    }
}

pub const REPORT_COLUMNS: [&str; 13] =
    ["model", "AC", "SN", "SP", "F1", "TP", "FN", "TN", "FP", "CCR", "MCC", "F1_BALANCED", "MultiAC"];

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.cells().join(","));
        out.push('\n');
    }
    out
}

/// Plain-text table with right-aligned numeric columns.
pub fn report_text(rows: &[ReportRow]) -> String {
    let table: Vec<Vec<String>> = std::iter::once(REPORT_COLUMNS.iter().map(|s| s.to_string()).collect())
        .chain(rows.iter().map(ReportRow::cells))
        .collect();
    let widths: Vec<usize> =
        (0..REPORT_COLUMNS.len()).map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(
                |(j, cell)| {
                    if j == 0 {
                        format!("{cell:<w$}", w = widths[j])
                    } else {
                        format!("{cell:>w$}", w = widths[j])
                    }
                },
            )
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
