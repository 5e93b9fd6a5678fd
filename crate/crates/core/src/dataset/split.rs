use rand::seq::SliceRandom;

use super::labels::LabeledDataset;
use crate::rng::seeded;
use crate::{Error, Result};

fn rows_by_class(labels: &[usize], class_names: &[String]) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); class_names.len()];
    for (row, &l) in labels.iter().enumerate() {
        by_class.get_mut(l).ok_or_else(|| Error::invalid(format!("label {l} out of range")))?.push(row);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(class_names[empty].clone()));
    }
    Ok(by_class)
}

/// Index-level stratified holdout split. Each class contributes
/// `round(fraction × size)` rows to the holdout, but never its last row, so a
/// singleton class always stays in training. Both index lists are sorted.
pub fn stratified_split_indices(
    labels: &[usize],
    class_names: &[String],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Precondition(format!("holdout fraction must lie in (0, 1), got {holdout_fraction}")));
    }
    let mut rng = seeded(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for mut rows in rows_by_class(labels, class_names)? {
        rows.shuffle(&mut rng);
        let n = rows.len();
        let take = ((holdout_fraction * n as f64).round() as usize).min(n - 1);
        holdout.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

/// Stratified `(train, holdout)` split of a dataset.
pub fn stratified_split(
    dataset: &LabeledDataset,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, holdout) = stratified_split_indices(&dataset.labels, &dataset.class_names, holdout_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&holdout)))
}

/// Disjoint folds covering every row once.
#[derive(Debug, Clone, PartialEq)]
pub struct KFolds {
    pub folds: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl KFolds {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// All rows outside fold `i`, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut rows: Vec<usize> =
            self.folds.iter().enumerate().filter(|&(j, _)| j != i).flat_map(|(_, f)| f.iter().copied()).collect();
        rows.sort_unstable();
        rows
    }
}

/// Stratified k-fold assignment over raw labels.
///
/// Rows of each class are shuffled, then dealt round-robin onto the folds
/// with the dealing position carried across classes. Per-class counts per
/// fold then differ by at most one, and so do total fold sizes.
pub fn stratified_kfold_labels(labels: &[usize], class_names: &[String], k: usize, seed: u64) -> Result<KFolds> {
    if k < 2 {
        return Err(Error::Precondition(format!("k-fold needs k >= 2, got {k}")));
    }
    let by_class = rows_by_class(labels, class_names)?;
    let mut warnings = Vec::new();
    for (c, rows) in by_class.iter().enumerate() {
        if rows.len() < k {
            warnings.push(format!(
                "class `{}` has {} samples, fewer than k={k}; some folds lack it",
                class_names[c],
                rows.len()
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut rng = seeded(seed);
    let mut folds = vec![Vec::new(); k];
    let mut position = 0usize;
    for mut rows in by_class {
        rows.shuffle(&mut rng);
        for row in rows {
            folds[position % k].push(row);
            position += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(KFolds { folds, warnings })
}

pub fn stratified_kfold(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<KFolds> {
    stratified_kfold_labels(&dataset.labels, &dataset.class_names, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn labels_from_counts(counts: &[usize]) -> Vec<usize> {
        counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect()
    }

    #[test]
    fn holdout_of_ten_percent() {
        let labels = labels_from_counts(&[25, 25, 25, 25]);
        let (train, hold) = stratified_split_indices(&labels, &names(4), 0.1, 7).unwrap();
        assert_eq!(train.len() + hold.len(), 100);
        for c in 0..4 {
            let n = hold.iter().filter(|&&r| labels[r] == c).count();
            assert!((2..=3).contains(&n), "class {c}: {n}");
        }
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let labels = labels_from_counts(&[9, 1]);
        for seed in 0..20 {
            let (train, hold) = stratified_split_indices(&labels, &names(2), 0.5, seed).unwrap();
            assert!(train.contains(&9));
            assert!(!hold.contains(&9));
        }
    }

    #[test]
    fn empty_class_is_named() {
        let labels = labels_from_counts(&[5, 0, 3]);
        match stratified_split_indices(&labels, &names(3), 0.2, 1) {
            Err(Error::EmptyClass(name)) => assert_eq!(name, "c1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_fraction() {
        let labels = labels_from_counts(&[5, 5]);
        assert!(stratified_split_indices(&labels, &names(2), 0.0, 1).is_err());
        assert!(stratified_split_indices(&labels, &names(2), 1.0, 1).is_err());
    }

    #[test]
    fn split_deterministic_per_seed() {
        let labels = labels_from_counts(&[40, 13, 7]);
        let a = stratified_split_indices(&labels, &names(3), 0.25, 99).unwrap();
        let b = stratified_split_indices(&labels, &names(3), 0.25, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ten_folds_of_twenty() {
        let labels = labels_from_counts(&[10, 10]);
        let kf = stratified_kfold_labels(&labels, &names(2), 10, 3).unwrap();
        for fold in &kf.folds {
            assert_eq!(fold.len(), 2);
            assert_eq!(fold.iter().filter(|&&r| labels[r] == 0).count(), 1);
        }
        assert!(kf.warnings.is_empty());
    }

    #[test]
    fn fold_sizes_8380() {
        let labels = labels_from_counts(&[1596, 6784]);
        let kf = stratified_kfold_labels(&labels, &names(2), 10, 0).unwrap();
        for fold in &kf.folds {
            assert!((837..=839).contains(&fold.len()));
        }
    }

    #[test]
    fn k_one_rejected() {
        assert!(stratified_kfold_labels(&[0, 1], &names(2), 1, 0).is_err());
    }

    #[test]
    fn small_class_warns_but_partitions() {
        let labels = labels_from_counts(&[20, 3]);
        let kf = stratified_kfold_labels(&labels, &names(2), 5, 0).unwrap();
        assert_eq!(kf.warnings.len(), 1);
        let total: usize = kf.folds.iter().map(Vec::len).sum();
        assert_eq!(total, 23);
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(
            counts in prop::collection::vec(1usize..40, 2..5),
            k in 2usize..11,
            seed in any::<u64>(),
        ) {
            let labels = labels_from_counts(&counts);
            let kf = stratified_kfold_labels(&labels, &names(counts.len()), k, seed).unwrap();
            let mut seen = vec![false; labels.len()];
            for fold in &kf.folds {
                for &r in fold {
                    prop_assert!(!seen[r]);
                    seen[r] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            for c in 0..counts.len() {
                let per: Vec<usize> = kf.folds.iter()
                    .map(|f| f.iter().filter(|&&r| labels[r] == c).count())
                    .collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }
    }
}
