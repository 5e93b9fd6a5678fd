use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Assay readout kind. Only IC50 survives curation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PotencyKind {
    IC50,
    Ki,
    EC50,
}

impl FromStr for PotencyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ic50" => Ok(PotencyKind::IC50),
            "ki" => Ok(PotencyKind::Ki),
            "ec50" => Ok(PotencyKind::EC50),
            _ => Err(format!("unknown potency kind `{s}`")),
        }
    }
}

impl fmt::Display for PotencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PotencyKind::IC50 => "IC50",
            PotencyKind::Ki => "Ki",
            PotencyKind::EC50 => "EC50",
        };
        f.write_str(s)
    }
}

/// Concentration scale of a potency value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PotencyUnit {
    Molar,
    Millimolar,
    Micromolar,
    Nanomolar,
}

impl PotencyUnit {
    /// Base-10 exponent of the unit relative to molar.
    pub fn log10_scale(self) -> i32 {
        match self {
            PotencyUnit::Molar => 0,
            PotencyUnit::Millimolar => -3,
            PotencyUnit::Micromolar => -6,
            PotencyUnit::Nanomolar => -9,
        }
    }
}

impl FromStr for PotencyUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        // µ (micro sign) and μ (greek mu) both show up in exports.
        let t = t.replace(['µ', 'μ'], "u");
        match t.to_ascii_lowercase().as_str() {
            "m" => Ok(PotencyUnit::Molar),
            "mm" => Ok(PotencyUnit::Millimolar),
            "um" => Ok(PotencyUnit::Micromolar),
            "nm" => Ok(PotencyUnit::Nanomolar),
            _ => Err(format!("unsupported concentration unit `{s}`")),
        }
    }
}

impl fmt::Display for PotencyUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PotencyUnit::Molar => "M",
            PotencyUnit::Millimolar => "mM",
            PotencyUnit::Micromolar => "uM",
            PotencyUnit::Nanomolar => "nM",
        };
        f.write_str(s)
    }
}

/// One raw assay measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRecord {
    pub compound_key: String,
    pub smiles: String,
    pub potency_value: f64,
    pub potency_kind: PotencyKind,
    pub unit: PotencyUnit,
    pub cell_line: Option<String>,
    /// Larger means a later publication.
    pub reference_ordinal: Option<i64>,
}

impl ActivityRecord {
    pub fn pic50(&self) -> Result<f64> {
        pic50_from_potency(self.potency_value, self.unit)
    }
}

/// −log10 of the concentration expressed in molar.
pub fn pic50_from_potency(value: f64, unit: PotencyUnit) -> Result<f64> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::invalid(format!("potency must be positive and finite, got {value}")));
    }
    // Split the unit exponent out so 1 uM lands exactly on 6.0.
    Ok(-value.log10() - f64::from(unit.log10_scale()))
}

const REQUIRED_COLUMNS: [&str; 5] = ["compound_key", "smiles", "value", "kind", "unit"];

/// Reads an activity export. Required columns: `compound_key, smiles, value,
/// kind, unit`; optional: `cell_line, reference_ordinal`. Column order is
/// free, extra columns are ignored.
pub fn parse_activity_csv<R: Read>(reader: R) -> Result<Vec<ActivityRecord>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot =
            find(name).ok_or_else(|| Error::Parse { line: 1, message: format!("missing required column `{name}`") })?;
    }
    let cell_idx = find("cell_line");
    let ref_idx = find("reference_ordinal");

    let mut records = Vec::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse { line, message };
        let get = |i: usize| row.get(i).unwrap_or("");
        let optional = |i: Option<usize>| i.map(get).filter(|s| !s.is_empty()).map(str::to_owned);

        let raw_value = get(idx[2]);
        let potency_value: f64 = raw_value.parse().map_err(|_| err(format!("value `{raw_value}` is not a number")))?;
        if !potency_value.is_finite() || potency_value <= 0.0 {
            return Err(err(format!("potency value must be positive, got `{raw_value}`")));
        }
        let potency_kind = get(idx[3]).parse().map_err(err)?;
        let unit = get(idx[4]).parse().map_err(err)?;
        let reference_ordinal = match optional(ref_idx) {
            Some(s) => Some(s.parse::<i64>().map_err(|_| err(format!("reference_ordinal `{s}` is not an integer")))?),
            None => None,
        };
        records.push(ActivityRecord {
            compound_key: get(idx[0]).to_owned(),
            smiles: get(idx[1]).to_owned(),
            potency_value,
            potency_kind,
            unit,
            cell_line: optional(cell_idx),
            reference_ordinal,
        });
    }
    Ok(records)
}
