//! Class rebalancing: SMOTE over-sampling and NearMiss-1 under-sampling.

use ndarray::{concatenate, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ResampleStrategy {
    #[default]
    #[serde(rename = "original")]
    Original,
    #[serde(rename = "over")]
    OverSample,
    #[serde(rename = "under")]
    UnderSample,
}

impl ResampleStrategy {
    /// Model-name suffix used in reports (`-ovrs`, `-unds`).
    pub fn suffix(self) -> &'static str {
        match self {
            ResampleStrategy::Original => "",
            ResampleStrategy::OverSample => "-ovrs",
            ResampleStrategy::UnderSample => "-unds",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ResampleStrategy::Original => "original",
            ResampleStrategy::OverSample => "over",
            ResampleStrategy::UnderSample => "under",
        }
    }
}

impl std::str::FromStr for ResampleStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "original" | "none" => Ok(ResampleStrategy::Original),
            "over" | "oversample" | "smote" => Ok(ResampleStrategy::OverSample),
            "under" | "undersample" | "nearmiss" => Ok(ResampleStrategy::UnderSample),
            _ => Err(format!("unknown resampling strategy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NearMissVersion {
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    pub strategy: ResampleStrategy,
    pub k_neighbors: usize,
    pub nearmiss: NearMissVersion,
    pub seed: u64,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        Self { strategy: ResampleStrategy::Original, k_neighbors: 5, nearmiss: NearMissVersion::One, seed: 0 }
    }
}

impl ResamplePlan {
    pub fn new(strategy: ResampleStrategy, seed: u64) -> Self {
        Self { strategy, seed, ..Default::default() }
    }
}

/// Synthetic rows plus, per row, the base and neighbor it was drawn between.
#[derive(Debug, Clone)]
pub struct Smote {
    pub synthetic: Array2<f64>,
    pub base_rows: Vec<usize>,
    pub neighbor_rows: Vec<usize>,
    pub effective_k: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows of `pool` to `query` (distance, then
/// index), skipping `exclude`.
fn nearest(pool: &Array2<f64>, query: ArrayView1<f64>, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = pool
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|&(i, _)| Some(i) != exclude)
        .map(|(i, row)| (sq_dist(row, query), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d
}

/// Draws `n_synthetic` points `x + u·(nn − x)`, `u ~ U[0, 1)`, where base
/// rows `x` cycle round-robin and `nn` is one of `x`'s `k` nearest minority
/// neighbors chosen at random.
pub fn smote(minority: &Array2<f64>, n_synthetic: usize, k: usize, seed: u64) -> Result<Smote> {
    let (m, d) = minority.dim();
    if n_synthetic == 0 {
        return Ok(Smote {
            synthetic: Array2::zeros((0, d)),
            base_rows: Vec::new(),
            neighbor_rows: Vec::new(),
            effective_k: k.min(m.saturating_sub(1)),
        });
    }
    if m < 2 {
        return Err(Error::invalid(format!("SMOTE needs at least 2 minority rows, got {m}")));
    }
    if k == 0 {
        return Err(Error::invalid("SMOTE needs k >= 1"));
    }
    let effective_k = if k > m - 1 {
        log::warn!("SMOTE k={k} exceeds minority size - 1; clamped to {}", m - 1);
        m - 1
    } else {
        k
    };

    let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; m];
    let mut rng = substream(seed, 0);
    let mut synthetic = Array2::zeros((n_synthetic, d));
    let mut base_rows = Vec::with_capacity(n_synthetic);
    let mut neighbor_rows = Vec::with_capacity(n_synthetic);
    for s in 0..n_synthetic {
        let base = s % m;
        let nn_list = neighbors[base].get_or_insert_with(|| {
            nearest(minority, minority.row(base), effective_k, Some(base)).into_iter().map(|(_, i)| i).collect()
        });
        let nn = nn_list[rng.random_range(0..nn_list.len())];
        let u: f64 = rng.random();
        let x = minority.row(base);
        let z = minority.row(nn);
        for j in 0..d {
            synthetic[[s, j]] = x[j] + u * (z[j] - x[j]);
        }
        base_rows.push(base);
        neighbor_rows.push(nn);
    }
    Ok(Smote { synthetic, base_rows, neighbor_rows, effective_k })
}

/// NearMiss-1: keeps the `target_count` majority rows with the smallest mean
/// distance to their `k` nearest minority rows (ties to the lower index).
/// Returned indices are ascending.
pub fn nearmiss(majority: &Array2<f64>, minority: &Array2<f64>, target_count: usize, k: usize) -> Result<Vec<usize>> {
    if minority.nrows() == 0 {
        return Err(Error::invalid("NearMiss needs a non-empty minority class"));
    }
    if target_count > majority.nrows() {
        return Err(Error::invalid(format!("target count {target_count} exceeds majority size {}", majority.nrows())));
    }
    if k == 0 {
        return Err(Error::invalid("NearMiss needs k >= 1"));
    }
    let k = if k > minority.nrows() {
        log::warn!("NearMiss k={k} exceeds minority size; clamped to {}", minority.nrows());
        minority.nrows()
    } else {
        k
    };
    let mut scored: Vec<(f64, usize)> = majority
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let near = nearest(minority, row, k, None);
            let mean = near.iter().map(|(d2, _)| d2.sqrt()).sum::<f64>() / near.len() as f64;
            (mean, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = scored[..target_count].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();
    Ok(keep)
}

fn rows_of(dataset: &LabeledDataset, class: usize) -> Vec<usize> {
    (0..dataset.n_rows()).filter(|&r| dataset.labels[r] == class).collect()
}

/// Rebalances class counts according to `plan`.
///
/// Over-sampling grows every smaller class to the largest class size with
/// SMOTE (synthetic rows are appended). Under-sampling shrinks the larger
/// class of a binary dataset to the smaller one with NearMiss.
pub fn balance(dataset: &LabeledDataset, plan: &ResamplePlan) -> Result<LabeledDataset> {
    let counts = dataset.class_counts();
    match plan.strategy {
        ResampleStrategy::Original => Ok(dataset.clone()),
        ResampleStrategy::OverSample => {
            let target = counts.iter().copied().max().unwrap_or(0);
            let mut matrix = dataset.matrix.clone();
            let mut labels = dataset.labels.clone();
            for (class, &count) in counts.iter().enumerate() {
                if count == 0 || count == target {
                    continue;
                }
                let minority = dataset.matrix.select(Axis(0), &rows_of(dataset, class));
                let s = smote(&minority, target - count, plan.k_neighbors, plan.seed ^ class as u64)?;
                matrix = concatenate(Axis(0), &[matrix.view(), s.synthetic.view()]).expect("column counts agree");
                labels.extend(std::iter::repeat_n(class, target - count));
            }
            LabeledDataset::new(matrix, labels, dataset.class_names.clone())
        }
        ResampleStrategy::UnderSample => {
            if counts.len() != 2 {
                return Err(Error::invalid("under-sampling requires binary labels"));
            }
            if counts[0] == counts[1] {
                return Ok(dataset.clone());
            }
            let (minor, major) = if counts[0] < counts[1] { (0, 1) } else { (1, 0) };
            let minor_rows = rows_of(dataset, minor);
            let major_rows = rows_of(dataset, major);
            let keep = nearmiss(
                &dataset.matrix.select(Axis(0), &major_rows),
                &dataset.matrix.select(Axis(0), &minor_rows),
                minor_rows.len(),
                plan.k_neighbors.min(minor_rows.len()).max(1),
            )?;
            let mut rows: Vec<usize> = minor_rows;
            rows.extend(keep.into_iter().map(|i| major_rows[i]));
            rows.sort_unstable();
            Ok(dataset.subset(&rows))
        }
    }
}
