//! File IO shared by the commands.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use toxtree::dataset::{parse_descriptor_csv, Compound, DescriptorTable};
use toxtree::features::parse_whitelist;

use crate::config::require_exists;

pub fn read_descriptors(path: &Path) -> Result<DescriptorTable> {
    require_exists(path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_descriptor_csv(file).with_context(|| format!("reading descriptors {}", path.display()))
}

/// Like [`read_descriptors`], but a file with no content at all reads as an
/// empty table instead of a missing-header error.
pub fn read_descriptors_allow_empty(path: &Path) -> Result<DescriptorTable> {
    require_exists(path)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim().is_empty() {
        return Ok(DescriptorTable { row_keys: vec![], feature_names: vec![], values: vec![] });
    }
    parse_descriptor_csv(text.as_bytes()).with_context(|| format!("reading descriptors {}", path.display()))
}

pub fn read_whitelist(path: &Path) -> Result<Vec<String>> {
    require_exists(path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let names = parse_whitelist(file).with_context(|| format!("reading whitelist {}", path.display()))?;
    if names.is_empty() {
        bail!("whitelist {} lists no features", path.display());
    }
    Ok(names)
}

/// Reads a curated `compound_key,smiles,pic50` file.
pub fn read_compounds(path: &Path) -> Result<Vec<Compound>> {
    require_exists(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .with_context(|| format!("{}: missing column `{name}`", path.display()))
    };
    let (k, s, p) = (col("compound_key")?, col("smiles")?, col("pic50")?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let key = rec.get(k).unwrap_or("").to_owned();
        let pic50: f64 = rec
            .get(p)
            .unwrap_or("")
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .with_context(|| format!("{} line {line}: pic50 is not a finite number", path.display()))?;
        if !seen.insert(key.clone()) {
            bail!("{} line {line}: duplicate compound_key `{key}`", path.display());
        }
        out.push(Compound { compound_key: key, smiles: rec.get(s).unwrap_or("").to_owned(), pic50 });
    }
    Ok(out)
}

/// Optional `subset` column of a compounds file, keyed by compound_key.
pub fn read_subset_tags(path: &Path) -> Result<Option<HashMap<String, String>>> {
    require_exists(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(k), Some(t)) = (find("compound_key"), find("subset")) else { return Ok(None) };
    let mut tags = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        tags.insert(rec.get(k).unwrap_or("").to_owned(), rec.get(t).unwrap_or("").to_owned());
    }
    Ok(Some(tags))
}

pub fn write_compounds(path: &Path, compounds: &[Compound]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["compound_key", "smiles", "pic50"])?;
    for c in compounds {
        w.write_record([c.compound_key.as_str(), c.smiles.as_str(), &c.pic50.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Descriptor rows paired with potencies, in compound-file order.
#[derive(Debug)]
pub struct Joined {
    pub table: DescriptorTable,
    pub pic50: Vec<f64>,
}

fn orphan_list(keys: &[&str]) -> String {
    const SHOWN: usize = 20;
    let mut s = keys.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if keys.len() > SHOWN {
        s.push_str(&format!(", … ({} total)", keys.len()));
    }
    s
}

/// Aligns descriptor rows to compounds by key. Every compound needs a
/// descriptor row; with `exact`, every descriptor row also needs a compound.
pub fn join(table: &DescriptorTable, compounds: &[Compound], exact: bool) -> Result<Joined> {
    let index = table.row_index();
    if index.len() != table.n_rows() {
        bail!("descriptor file repeats a compound key");
    }
    let missing: Vec<&str> =
        compounds.iter().map(|c| c.compound_key.as_str()).filter(|k| !index.contains_key(k)).collect();
    let known: HashSet<&str> = compounds.iter().map(|c| c.compound_key.as_str()).collect();
    let extra: Vec<&str> = table.row_keys.iter().map(String::as_str).filter(|k| !known.contains(k)).collect();
    let mut problems = Vec::new();
    if !missing.is_empty() {
        problems.push(format!("compounds without descriptors: {}", orphan_list(&missing)));
    }
    if exact && !extra.is_empty() {
        problems.push(format!("descriptor rows without compounds: {}", orphan_list(&extra)));
    }
    if !problems.is_empty() {
        bail!("key sets differ; {}", problems.join("; "));
    }
    if !extra.is_empty() {
        log::info!("ignoring {} descriptor rows with no potency", extra.len());
    }
    let rows: Vec<usize> = compounds.iter().map(|c| index[c.compound_key.as_str()]).collect();
    Ok(Joined {
        table: DescriptorTable {
            row_keys: rows.iter().map(|&r| table.row_keys[r].clone()).collect(),
            feature_names: table.feature_names.clone(),
            values: rows.iter().map(|&r| table.values[r].clone()).collect(),
        },
        pic50: compounds.iter().map(|c| c.pic50).collect(),
    })
}

/// Dense matrix with each missing cell replaced by its column mean.
pub fn impute_mean(table: &DescriptorTable) -> Result<Array2<f64>> {
    let (n, d) = (table.n_rows(), table.n_features());
    let mut means = Vec::with_capacity(d);
    for j in 0..d {
        let present: Vec<f64> = table.values.iter().filter_map(|r| r[j]).collect();
        if present.is_empty() {
            bail!("feature `{}` has no values", table.feature_names[j]);
        }
        means.push(present.iter().sum::<f64>() / present.len() as f64);
    }
    Ok(Array2::from_shape_fn((n, d), |(i, j)| table.values[i][j].unwrap_or(means[j])))
}

/// Level of a potency against descending cut-offs: how many it reaches.
pub fn level(pic50: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&t| pic50 >= t).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(keys: &[&str]) -> DescriptorTable {
        DescriptorTable {
            row_keys: keys.iter().map(|k| k.to_string()).collect(),
            feature_names: vec!["a".into()],
            values: keys.iter().enumerate().map(|(i, _)| vec![Some(i as f64)]).collect(),
        }
    }

    fn compounds(keys: &[&str]) -> Vec<Compound> {
        keys.iter().map(|k| Compound { compound_key: k.to_string(), smiles: String::new(), pic50: 5.0 }).collect()
    }

    #[test]
    fn join_reorders_to_compounds() {
        let j = join(&table(&["x", "y", "z"]), &compounds(&["z", "x"]), false).unwrap();
        assert_eq!(j.table.row_keys, vec!["z", "x"]);
        assert_eq!(j.table.values[0][0], Some(2.0));
    }

    #[test]
    fn exact_join_lists_orphans() {
        let err = join(&table(&["x", "y"]), &compounds(&["x", "q"]), true).unwrap_err().to_string();
        assert!(err.contains('q') && err.contains('y'), "{err}");
    }

    #[test]
    fn imputation_and_levels() {
        let t = DescriptorTable {
            row_keys: vec!["a".into(), "b".into(), "c".into()],
            feature_names: vec!["f".into()],
            values: vec![vec![Some(1.0)], vec![None], vec![Some(3.0)]],
        };
        assert_eq!(impute_mean(&t).unwrap()[[1, 0]], 2.0);
        let th = [6.0, 5.0, 4.5];
        assert_eq!([7.0, 6.0, 5.2, 4.5, 4.4].map(|p| level(p, &th)), [3, 3, 2, 1, 0]);
    }
}
