use std::collections::{HashMap, HashSet};
use std::io::Read;

use crate::{Error, Result};

/// Compounds × named descriptors; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    pub row_keys: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl DescriptorTable {
    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.row_keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect()
    }

    /// Restricts the table to `names`, in that order. Errors on the first
    /// name that is not a column.
    pub fn select(&self, names: &[String]) -> Result<DescriptorTable> {
        let cols = names
            .iter()
            .map(|n| self.feature_index(n).ok_or_else(|| Error::MissingFeature(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(DescriptorTable {
            row_keys: self.row_keys.clone(),
            feature_names: names.to_vec(),
            values: self.values.iter().map(|row| cols.iter().map(|&c| row[c]).collect()).collect(),
        })
    }
}

fn parse_cell(token: &str) -> std::result::Result<Option<f64>, ()> {
    let t = token.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let lower = t.to_ascii_lowercase();
    let bare = lower.trim_start_matches(['+', '-']);
    if matches!(bare, "nan" | "infinity" | "inf") {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

/// Reads a descriptor export (first column is the compound name, header row
/// required). Empty, `NaN` and `Infinity` cells are read as missing.
pub fn parse_descriptor_csv<R: Read>(reader: R) -> Result<DescriptorTable> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = csv.records();

    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Parse { line: 1, message: "missing header row".into() });
        }
    };
    if header.is_empty() {
        return Err(Error::Parse { line: 1, message: "empty header row".into() });
    }
    let feature_names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_owned()).collect();
    let mut seen = HashSet::new();
    for name in &feature_names {
        if !seen.insert(name.as_str()) {
            return Err(Error::Parse { line: 1, message: format!("duplicate feature name `{name}`") });
        }
    }

    let width = header.len();
    let mut row_keys = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::Parse { line, message: format!("expected {width} fields, found {}", rec.len()) });
        }
        row_keys.push(rec[0].trim().to_owned());
        let row = rec
            .iter()
            .skip(1)
            .zip(&feature_names)
            .map(|(cell, name)| {
                parse_cell(cell).map_err(|_| Error::Parse {
                    line,
                    message: format!("cell `{cell}` in column `{name}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok(DescriptorTable { row_keys, feature_names, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_missing_cell() {
        let text = "Name,a,b\nm1,1.5,\nm2,2,3e-1\n";
        let t = parse_descriptor_csv(text.as_bytes()).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.feature_names, vec!["a", "b"]);
        assert_eq!(t.missing_count(), 1);
        assert_eq!(t.values[1][1], Some(0.3));
    }

    #[test]
    fn header_only() {
        let t = parse_descriptor_csv("Name,a,b\n".as_bytes()).unwrap();
        assert_eq!(t.n_rows(), 0);
        assert_eq!(t.n_features(), 2);
    }

    #[test]
    fn nan_and_infinity_tokens_are_missing() {
        let text = "Name,a,b,c,d\nm1,NaN,Infinity,-Infinity,nan\n";
        let t = parse_descriptor_csv(text.as_bytes()).unwrap();
        assert_eq!(t.missing_count(), 4);
    }

    #[test]
    fn bad_cell_reports_line() {
        let text = "Name,a\nm1,1\nm2,abc\n";
        match parse_descriptor_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = "Name,a,b\nm1,1,2\nm2,1\n";
        assert!(matches!(parse_descriptor_csv(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn duplicate_feature_names() {
        let text = "Name,a,a\nm1,1,2\n";
        assert!(matches!(parse_descriptor_csv(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn select_reports_missing_feature() {
        let t = parse_descriptor_csv("Name,a,b\nm1,1,2\n".as_bytes()).unwrap();
        let s = t.select(&["b".into()]).unwrap();
        assert_eq!(s.values[0], vec![Some(2.0)]);
        match t.select(&["zz".into()]) {
            Err(Error::MissingFeature(n)) => assert_eq!(n, "zz"),
            other => panic!("{other:?}"),
        }
    }
}
