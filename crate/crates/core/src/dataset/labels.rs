use std::fmt;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::curation::Compound;
use crate::{Error, Result};

/// Class index of the non-blocker class in binary datasets.
pub const NON_BLOCKER: usize = 0;
/// Class index of the blocker class in binary datasets.
pub const BLOCKER: usize = 1;

/// Potency band of a compound. Ordered `Non < Weak < Moderate < Strong`; the
/// discriminant doubles as the multiclass label index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PotencyClass {
    Non = 0,
    Weak = 1,
    Moderate = 2,
    Strong = 3,
}

impl PotencyClass {
    pub const ALL: [PotencyClass; 4] =
        [PotencyClass::Non, PotencyClass::Weak, PotencyClass::Moderate, PotencyClass::Strong];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Lower PIC50 bound of the band (`None` for non-blockers).
    pub fn lower_bound(self) -> Option<f64> {
        match self {
            PotencyClass::Strong => Some(6.0),
            PotencyClass::Moderate => Some(5.0),
            PotencyClass::Weak => Some(4.5),
            PotencyClass::Non => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PotencyClass::Strong => "strong-blocker",
            PotencyClass::Moderate => "moderate-blocker",
            PotencyClass::Weak => "weak-blocker",
            PotencyClass::Non => "non-blocker",
        }
    }

    pub fn class_names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_owned()).collect()
    }
}

impl fmt::Display for PotencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Strong ≥ 6 > Moderate ≥ 5 > Weak ≥ 4.5 > Non.
pub fn assign_class(pic50: f64) -> Result<PotencyClass> {
    if pic50.is_nan() {
        return Err(Error::invalid("PIC50 is NaN"));
    }
    Ok(if pic50 >= 6.0 {
        PotencyClass::Strong
    } else if pic50 >= 5.0 {
        PotencyClass::Moderate
    } else if pic50 >= 4.5 {
        PotencyClass::Weak
    } else {
        PotencyClass::Non
    })
}

/// Multiclass labels (indices into [`PotencyClass::class_names`]).
pub fn multiclass_labels(compounds: &[Compound]) -> Result<Vec<usize>> {
    compounds.iter().map(|c| assign_class(c.pic50).map(PotencyClass::index)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLabels {
    pub threshold: f64,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub n_blocker: usize,
    pub n_non_blocker: usize,
}

/// Blocker iff `pic50 >= threshold`.
pub fn binarize(compounds: &[Compound], threshold: f64) -> Result<BinaryLabels> {
    if !threshold.is_finite() {
        return Err(Error::invalid(format!("threshold must be finite, got {threshold}")));
    }
    let mut labels = Vec::with_capacity(compounds.len());
    for c in compounds {
        if c.pic50.is_nan() {
            return Err(Error::invalid(format!("PIC50 of `{}` is NaN", c.compound_key)));
        }
        labels.push(if c.pic50 >= threshold { BLOCKER } else { NON_BLOCKER });
    }
    let n_blocker = labels.iter().filter(|&&l| l == BLOCKER).count();
    Ok(BinaryLabels {
        threshold,
        n_non_blocker: labels.len() - n_blocker,
        n_blocker,
        labels,
        class_names: vec!["non-blocker".into(), "blocker".into()],
    })
}

/// Dense features plus per-row class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub matrix: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(matrix: Array2<f64>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if matrix.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite cells"));
        }
        Ok(Self { matrix, labels, class_names })
    }

    /// Binary dataset with the standard `{non-blocker, blocker}` names.
    pub fn binary(matrix: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        Self::new(matrix, labels, vec!["non-blocker".into(), "blocker".into()])
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            matrix: self.matrix.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{pic50_from_potency, PotencyUnit};
    use proptest::prelude::*;

    fn compound(p: f64) -> Compound {
        Compound { compound_key: format!("k{p}"), smiles: String::new(), pic50: p }
    }

    #[test]
    fn class_boundaries() {
        assert_eq!(assign_class(6.0).unwrap(), PotencyClass::Strong);
        assert_eq!(assign_class(5.0).unwrap(), PotencyClass::Moderate);
        assert_eq!(assign_class(5.999).unwrap(), PotencyClass::Moderate);
        assert_eq!(assign_class(4.5).unwrap(), PotencyClass::Weak);
        assert_eq!(assign_class(4.499).unwrap(), PotencyClass::Non);
        assert!(assign_class(f64::NAN).is_err());
        assert!(PotencyClass::Strong > PotencyClass::Moderate);
        assert!(PotencyClass::Weak > PotencyClass::Non);
    }

    #[test]
    fn micromolar_boundaries_are_exact() {
        let one = pic50_from_potency(1.0, PotencyUnit::Micromolar).unwrap();
        let ten = pic50_from_potency(10.0, PotencyUnit::Micromolar).unwrap();
        assert_eq!(assign_class(one).unwrap(), PotencyClass::Strong);
        assert_eq!(assign_class(ten).unwrap(), PotencyClass::Moderate);
    }

    #[test]
    fn binarize_at_five() {
        let b = binarize(&[compound(6.1), compound(5.2), compound(4.0)], 5.0).unwrap();
        assert_eq!(b.labels, vec![BLOCKER, BLOCKER, NON_BLOCKER]);
        assert_eq!((b.n_blocker, b.n_non_blocker), (2, 1));
        assert!(binarize(&[compound(5.0)], f64::NAN).is_err());
        assert!(binarize(&[compound(f64::NAN)], 5.0).is_err());
    }

    #[test]
    fn dataset_validation() {
        let m = Array2::zeros((2, 1));
        assert!(LabeledDataset::binary(m.clone(), vec![0, 2]).is_err());
        assert!(LabeledDataset::binary(m.clone(), vec![0]).is_err());
        let mut bad = m.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(LabeledDataset::binary(bad, vec![0, 1]).is_err());
        let ds = LabeledDataset::binary(m, vec![0, 1]).unwrap();
        assert_eq!(ds.class_counts(), vec![1, 1]);
    }

    proptest! {
        #[test]
        fn binarize_agrees_with_class_rank(p in 2.0f64..9.0) {
            let class = assign_class(p).unwrap();
            for t in [PotencyClass::Strong, PotencyClass::Moderate, PotencyClass::Weak] {
                let b = binarize(&[compound(p)], t.lower_bound().unwrap()).unwrap();
                prop_assert_eq!(b.labels[0] == BLOCKER, class >= t);
            }
        }
    }
}
