//! Two-level checking of result values.
//!
//! Level 1 runs while the operator types: fetch the range, classify, show the
//! range text. Level 2 runs when a report is assembled: every stored entry is
//! re-classified against the catalog version it was entered under, and any
//! disagreement with the stored level-1 outcome is reported.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogSnapshot};
use crate::error::{Error, Result};
use crate::range::{classify, parse_decimal, Classification, RangeSpec, UnitTag};
use crate::results::{EntryId, ObservedValue, ResultEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum CheckLevel {
    Entry,
    Report,
}

impl From<CheckLevel> for u8 {
    fn from(level: CheckLevel) -> u8 {
        match level {
            CheckLevel::Entry => 1,
            CheckLevel::Report => 2,
        }
    }
}

impl TryFrom<u8> for CheckLevel {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, String> {
        match value {
            1 => Ok(CheckLevel::Entry),
            2 => Ok(CheckLevel::Report),
            other => Err(format!("check level must be 1 or 2, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub classification: Classification,
    /// Range text shown to the operator, as held by the catalog at
    /// `catalog_version`.
    pub range_display: String,
    pub catalog_version: u64,
    pub level: CheckLevel,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level1 {
    pub outcome: ValidationOutcome,
    pub value: ObservedValue,
}

fn observe(spec: &RangeSpec, raw_value: &str) -> Result<ObservedValue> {
    let verbatim = raw_value.trim();
    if verbatim.is_empty() {
        return Err(Error::EmptyValue);
    }
    let numeric = if spec.is_numeric() {
        Some(parse_decimal(verbatim).ok_or_else(|| Error::NonNumericValue(verbatim.to_string()))?)
    } else {
        None
    };
    Ok(ObservedValue {
        verbatim: verbatim.to_string(),
        numeric,
    })
}

fn classify_observed(spec: &RangeSpec, value: &ObservedValue, unit: &UnitTag) -> Option<Classification> {
    match spec {
        RangeSpec::Qualitative => Some(Classification::Indeterminate),
        _ => value
            .numeric
            .or_else(|| parse_decimal(&value.verbatim))
            .map(|n| classify(n, unit, spec)),
    }
}

/// Entry-time check. Reads the catalog snapshot, never writes anything.
pub fn level1_check(
    catalog: &CatalogSnapshot,
    slno: u32,
    raw_value: &str,
    unit: &UnitTag,
    at: DateTime<Utc>,
) -> Result<Level1> {
    let entry = catalog.get(slno)?;
    let value = observe(&entry.range, raw_value)?;
    let classification = classify_observed(&entry.range, &value, unit)
        .ok_or_else(|| Error::NonNumericValue(value.verbatim.clone()))?;
    Ok(Level1 {
        outcome: ValidationOutcome {
            classification,
            range_display: entry.range_text.clone(),
            catalog_version: catalog.version,
            level: CheckLevel::Entry,
            at,
        },
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recheck {
    pub entry_id: EntryId,
    pub classification: Classification,
    pub agrees_with_level1: bool,
}

/// Report-time check. Each entry is re-classified against the catalog version
/// recorded on it, so later range edits never re-flag old results.
pub fn level2_recheck<'a>(
    catalog: &Catalog,
    entries: impl IntoIterator<Item = &'a ResultEntry>,
) -> Result<Vec<Recheck>> {
    entries
        .into_iter()
        .map(|entry| {
            let snapshot = catalog
                .at_version(entry.catalog_version)
                .ok_or(Error::UnknownSlno(entry.slno))?;
            let spec = &snapshot.get(entry.slno)?.range;
            // A numeric spec with no readable number can only come from a
            // damaged store; report it as a disagreement.
            let classification = classify_observed(spec, &entry.value, &entry.unit)
                .unwrap_or(Classification::Indeterminate);
            Ok(Recheck {
                entry_id: entry.entry_id,
                classification,
                agrees_with_level1: classification == entry.level1.classification
                    && entry.level1.catalog_version == entry.catalog_version,
            })
        })
        .collect()
}
