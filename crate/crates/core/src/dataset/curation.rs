use std::collections::HashMap;
use std::fmt;

use super::activity::{ActivityRecord, PotencyKind};
use crate::{Error, Result};

/// A curated, unique compound with its normalized potency.
#[derive(Debug, Clone, PartialEq)]
pub struct Compound {
    pub compound_key: String,
    pub smiles: String,
    pub pic50: f64,
}

/// What identifies two records as the same compound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DedupKey {
    #[default]
    CompoundKey,
    /// Exact SMILES string match.
    Smiles,
}

#[derive(Debug, Clone)]
pub struct CurationOptions {
    /// Most preferred first.
    pub cell_preference: Vec<String>,
    pub dedup_key: DedupKey,
    /// Maps a compound key or SMILES string to an external identifier that
    /// replaces it as the grouping key.
    pub key_overrides: HashMap<String, String>,
    /// Largest tolerated PIC50 span inside a duplicate group.
    pub max_span: f64,
}

impl Default for CurationOptions {
    fn default() -> Self {
        Self {
            cell_preference: vec!["HEK293".into(), "CHO".into()],
            dedup_key: DedupKey::default(),
            key_overrides: HashMap::new(),
            max_span: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurationAction {
    Kept,
    Merged,
    Discarded,
}

impl fmt::Display for CurationAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurationAction::Kept => "kept",
            CurationAction::Merged => "merged",
            CurationAction::Discarded => "discarded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationEntry {
    pub key: String,
    pub action: CurationAction,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurationReport {
    pub entries: Vec<CurationEntry>,
}

impl CurationReport {
    pub fn count(&self, action: CurationAction) -> usize {
        self.entries.iter().filter(|e| e.action == action).count()
    }

    /// One `KEY<TAB>ACTION<TAB>REASON` line per entry.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.key, e.action, e.reason));
        }
        out
    }
}

/// Collapses duplicate measurements into one PIC50 per compound.
///
/// Per group: non-IC50 records are dropped; only records from the most
/// preferred cell line present are considered; a unique latest reference
/// wins outright; otherwise values spanning more than `max_span` log units
/// discard the compound and the rest are averaged.
pub fn resolve_duplicates(
    records: &[ActivityRecord],
    options: &CurationOptions,
) -> Result<(Vec<Compound>, CurationReport)> {
    if records.is_empty() {
        return Err(Error::invalid("no activity records to curate"));
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&ActivityRecord>> = HashMap::new();
    for rec in records {
        let base = match options.dedup_key {
            DedupKey::CompoundKey => &rec.compound_key,
            DedupKey::Smiles => &rec.smiles,
        };
        let key = options
            .key_overrides
            .get(base)
            .or_else(|| options.key_overrides.get(&rec.compound_key))
            .unwrap_or(base)
            .clone();
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(rec);
    }

    let mut compounds = Vec::new();
    let mut report = CurationReport::default();
    for key in order {
        let group = &groups[&key];
        let reported_key = group[0].compound_key.clone();
        let (entry, compound) = resolve_group(reported_key, group, options)?;
        report.entries.push(entry);
        compounds.extend(compound);
    }
    Ok((compounds, report))
}

fn resolve_group(
    key: String,
    group: &[&ActivityRecord],
    options: &CurationOptions,
) -> Result<(CurationEntry, Option<Compound>)> {
    let entry = |action, reason: String| CurationEntry { key: key.clone(), action, reason };

    let mut pool: Vec<&ActivityRecord> =
        group.iter().copied().filter(|r| r.potency_kind == PotencyKind::IC50).collect();
    if pool.is_empty() {
        return Ok((entry(CurationAction::Discarded, "no IC50 record".into()), None));
    }

    let preferred =
        options.cell_preference.iter().find(|cell| pool.iter().any(|r| r.cell_line.as_deref() == Some(cell.as_str())));
    if let Some(cell) = preferred {
        if pool.len() > 1 {
            pool.retain(|r| r.cell_line.as_deref() == Some(cell.as_str()));
        }
    }

    let smiles = pool[0].smiles.clone();
    if pool.len() == 1 {
        let pic50 = pool[0].pic50()?;
        return Ok((
            entry(CurationAction::Kept, "single record".into()),
            Some(Compound { compound_key: key.clone(), smiles, pic50 }),
        ));
    }

    if let Some(latest) = unique_latest(&pool) {
        let pic50 = latest.pic50()?;
        let ordinal = latest.reference_ordinal.unwrap_or_default();
        return Ok((
            entry(CurationAction::Kept, format!("latest reference {ordinal}")),
            Some(Compound { compound_key: key.clone(), smiles: latest.smiles.clone(), pic50 }),
        ));
    }

    let values = pool.iter().map(|r| r.pic50()).collect::<Result<Vec<_>>>()?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > options.max_span {
        return Ok((
            entry(CurationAction::Discarded, format!("PIC50 span {span:.3} exceeds {}", options.max_span)),
            None,
        ));
    }
    let pic50 = values.iter().sum::<f64>() / values.len() as f64;
    Ok((
        entry(CurationAction::Merged, format!("mean of {} records", values.len())),
        Some(Compound { compound_key: key.clone(), smiles, pic50 }),
    ))
}

fn unique_latest<'a>(pool: &[&'a ActivityRecord]) -> Option<&'a ActivityRecord> {
    let max = pool.iter().filter_map(|r| r.reference_ordinal).max()?;
    let mut at_max = pool.iter().filter(|r| r.reference_ordinal == Some(max));
    let first = at_max.next()?;
    at_max.next().is_none().then_some(*first)
}
