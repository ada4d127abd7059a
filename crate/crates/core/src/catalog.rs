//! The master table of tests and their reference ranges.
//!
//! The catalog is versioned: every mutation produces a new immutable
//! [`CatalogSnapshot`] and older snapshots stay addressable, so results
//! validated against version `n` can always be re-checked against version `n`.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::range::{parse_range, RangeSpec};

pub const DEGENERATE_RANGE_NOTE: &str = "degenerate range — specialist confirmation required";

const HEADER: [&str; 3] = ["SLNO", "Test_Name", "Value_Range"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum Verification {
    Unverified,
    Verified {
        specialist_id: String,
        at: DateTime<Utc>,
    },
}

impl Verification {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verification::Verified { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub slno: u32,
    pub test_name: String,
    /// Range text exactly as imported (trimmed).
    pub range_text: String,
    pub range: RangeSpec,
    pub verification: Verification,
    pub review_note: Option<String>,
}

impl CatalogEntry {
    /// Builds an unverified entry, deriving `range` from `range_text`.
    pub fn new(slno: u32, test_name: &str, range_text: &str) -> Result<Self> {
        let range_text = range_text.trim().to_string();
        let range = parse_range(&range_text)?;
        let review_note = range.is_degenerate().then(|| DEGENERATE_RANGE_NOTE.to_string());
        Ok(Self {
            slno,
            test_name: test_name.trim().to_string(),
            range_text,
            range,
            verification: Verification::Unverified,
            review_note,
        })
    }
}

fn name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

/// What the entry screen shows next to a value field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeLookup {
    pub spec: RangeSpec,
    pub display_text: String,
}

/// One immutable version of the catalog.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CatalogSnapshot {
    pub version: u64,
    entries: BTreeMap<u32, CatalogEntry>,
}

impl CatalogSnapshot {
    pub fn get(&self, slno: u32) -> Result<&CatalogEntry> {
        self.entries.get(&slno).ok_or(Error::UnknownSlno(slno))
    }

    pub fn lookup_range(&self, slno: u32) -> Result<RangeLookup> {
        let entry = self.get(slno)?;
        Ok(RangeLookup {
            spec: entry.range.clone(),
            display_text: entry.range_text.clone(),
        })
    }

    /// Entries in serial-number order, optionally filtered by a
    /// case-insensitive substring of the test name.
    pub fn list_tests(&self, filter: Option<&str>) -> Vec<&CatalogEntry> {
        let needle = filter.map(str::to_lowercase);
        self.entries
            .values()
            .filter(|e| match &needle {
                Some(n) => e.test_name.to_lowercase().contains(n.as_str()),
                None => true,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn has_name(&self, name: &str) -> bool {
        let key = name_key(name);
        self.entries.values().any(|e| name_key(&e.test_name) == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the source file.
    pub line: u64,
    pub slno: Option<u32>,
    pub error: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImportReport {
    pub loaded: usize,
    pub errors: Vec<RowError>,
}

/// Result of validating an import file against a snapshot, before anything
/// is applied.
#[derive(Debug, Clone)]
pub struct PreparedImport {
    pub entries: Vec<CatalogEntry>,
    pub report: ImportReport,
}

fn parse_slno(text: &str) -> Result<u32> {
    match text.trim().parse::<u32>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::MalformedRow(format!("SLNO {:?} is not a positive integer", text.trim()))),
    }
}

/// Checks an import file against `base`. Rows are accepted or rejected
/// individually; only a missing or wrong header fails the whole file.
pub fn prepare_import(base: &CatalogSnapshot, csv_text: &str) -> Result<PreparedImport> {
    let csv_text = csv_text.strip_prefix('\u{feff}').unwrap_or(csv_text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedFile(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::MalformedFile(format!(
            "header must be exactly {}, found {:?}",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut staged = base.clone();
    let mut prepared = PreparedImport {
        entries: Vec::new(),
        report: ImportReport::default(),
    };
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                prepared.report.errors.push(RowError {
                    line,
                    slno: None,
                    error: "MalformedRow".into(),
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let slno = record.get(0).and_then(|s| parse_slno(s).ok());
        let outcome = (|| {
            if record.len() != HEADER.len() {
                return Err(Error::MalformedRow(format!(
                    "expected {} fields, found {}",
                    HEADER.len(),
                    record.len()
                )));
            }
            let slno = parse_slno(&record[0])?;
            let name = record[1].trim();
            if name.is_empty() {
                return Err(Error::MalformedRow("Test_Name is blank".into()));
            }
            let entry = CatalogEntry::new(slno, name, &record[2])?;
            if staged.entries.contains_key(&slno) {
                return Err(Error::DuplicateSlno(slno));
            }
            if staged.has_name(name) {
                return Err(Error::DuplicateTestName(name.to_string()));
            }
            Ok(entry)
        })();
        match outcome {
            Ok(entry) => {
                staged.entries.insert(entry.slno, entry.clone());
                prepared.entries.push(entry);
                prepared.report.loaded += 1;
            }
            Err(err) => prepared.report.errors.push(RowError {
                line,
                slno,
                error: err.code().to_string(),
                detail: err.to_string(),
            }),
        }
    }
    Ok(prepared)
}

/// Full version history of the catalog. Version 0 is the empty catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    versions: Vec<Arc<CatalogSnapshot>>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self {
            versions: vec![Arc::new(CatalogSnapshot::default())],
        }
    }
}

impl Catalog {
    pub fn current(&self) -> &Arc<CatalogSnapshot> {
        self.versions.last().expect("catalog always has version 0")
    }

    pub fn version(&self) -> u64 {
        self.current().version
    }

    pub fn at_version(&self, version: u64) -> Option<&Arc<CatalogSnapshot>> {
        self.versions.get(usize::try_from(version).ok()?)
    }

    /// Validates a verification request without applying it.
    pub fn check_verify(&self, slno: u32) -> Result<()> {
        self.current().get(slno).map(|_| ())
    }

    /// Validates a range edit and returns the entry as it would become.
    /// Changing the range text clears any verification and re-derives the
    /// review note.
    pub fn prepare_edit(&self, slno: u32, range_text: &str) -> Result<CatalogEntry> {
        let existing = self.current().get(slno)?;
        let mut edited = CatalogEntry::new(slno, &existing.test_name, range_text)?;
        if edited.range_text == existing.range_text {
            edited.verification = existing.verification.clone();
            edited.review_note = existing.review_note.clone();
        }
        Ok(edited)
    }

    /// Publishes a new snapshot built by `edit`. `version` must be exactly
    /// one past the current version; the snapshot is swapped in whole.
    fn publish(
        &mut self,
        version: u64,
        edit: impl FnOnce(&mut BTreeMap<u32, CatalogEntry>) -> Result<()>,
    ) -> Result<()> {
        if version != self.version() + 1 {
            return Err(Error::LogCorrupt(format!(
                "catalog version {version} does not follow {}",
                self.version()
            )));
        }
        let mut entries = self.current().entries.clone();
        edit(&mut entries)?;
        self.versions.push(Arc::new(CatalogSnapshot { version, entries }));
        Ok(())
    }

    pub(crate) fn apply_import(&mut self, version: u64, imported: &[CatalogEntry]) -> Result<()> {
        self.publish(version, |entries| {
            for entry in imported {
                if entries.insert(entry.slno, entry.clone()).is_some() {
                    return Err(Error::LogCorrupt(format!("slno {} imported twice", entry.slno)));
                }
            }
            Ok(())
        })
    }

    pub(crate) fn apply_verify(
        &mut self,
        version: u64,
        slno: u32,
        specialist_id: &str,
        at: DateTime<Utc>,
    ) -> Result<()> {
        self.publish(version, |entries| {
            let entry = entries.get_mut(&slno).ok_or(Error::UnknownSlno(slno))?;
            entry.verification = Verification::Verified {
                specialist_id: specialist_id.to_string(),
                at,
            };
            Ok(())
        })
    }

    pub(crate) fn apply_edit(&mut self, version: u64, edited: &CatalogEntry) -> Result<()> {
        self.publish(version, |entries| {
            let slot = entries
                .get_mut(&edited.slno)
                .ok_or(Error::UnknownSlno(edited.slno))?;
            *slot = edited.clone();
            Ok(())
        })
    }
}
