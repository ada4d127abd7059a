//! Patient reports with distinct upper/lower-limit markers and the sign-off
//! gate.

use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patient::Patient;
use crate::range::{Classification, UnitTag};
use crate::results::{EntryId, EntryStatus, OverrideRecord, ReportId, ResultEntry};

pub const STRUCTURED_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    None,
    #[serde(rename = "UL")]
    Upper,
    #[serde(rename = "LL")]
    Lower,
    #[serde(rename = "UNIT")]
    Unit,
}

impl Flag {
    pub fn for_classification(classification: Classification) -> Flag {
        match classification {
            Classification::AboveUL => Flag::Upper,
            Classification::BelowLL => Flag::Lower,
            Classification::UnitMismatch => Flag::Unit,
            Classification::InRange | Classification::Indeterminate => Flag::None,
        }
    }

    /// Text printed in the Flag column.
    pub fn label(self) -> &'static str {
        match self {
            Flag::None => "",
            Flag::Upper => "UL",
            Flag::Lower => "LL",
            Flag::Unit => "UNIT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLine {
    pub entry_id: EntryId,
    pub slno: u32,
    pub test_name: String,
    pub value_verbatim: String,
    pub unit: UnitTag,
    pub normal_range_display: String,
    pub classification: Classification,
    pub flag: Flag,
    pub entry_status: EntryStatus,
    pub override_reason: Option<String>,
}

impl ReportLine {
    pub fn from_entry(entry: &ResultEntry, test_name: &str, override_record: Option<&OverrideRecord>) -> Self {
        let classification = entry.level1.classification;
        Self {
            entry_id: entry.entry_id,
            slno: entry.slno,
            test_name: test_name.to_string(),
            value_verbatim: entry.value.verbatim.clone(),
            unit: entry.unit.clone(),
            normal_range_display: entry.level1.range_display.clone(),
            classification,
            flag: Flag::for_classification(classification),
            entry_status: entry.status,
            override_reason: override_record.map(|r| r.reason.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum ReportStatus {
    Draft,
    SignedOff {
        supervisor_id: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: ReportId,
    pub patient: Patient,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
    pub lines: Vec<ReportLine>,
    pub overrides: Vec<OverrideRecord>,
    pub status: ReportStatus,
    pub built_at: DateTime<Utc>,
    /// Catalog version in force when the report was built or signed.
    pub catalog_version: u64,
}

impl Report {
    pub fn is_signed_off(&self) -> bool {
        matches!(self.status, ReportStatus::SignedOff { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Structured,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "structured" => Ok(ReportFormat::Structured),
            other => Err(Error::ConfigInvalid(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn render(report: &Report, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Text => render_text(report).into_bytes(),
        ReportFormat::Structured => to_structured(report),
    }
}

const COLUMNS: [&str; 5] = ["Test Name", "Result", "Unit", "Normal Range", "Flag"];

/// Fixed-width table; each column is padded to its widest cell plus two
/// spaces. Overridden lines carry a trailing `overridden: <reason>`.
pub fn render_text(report: &Report) -> String {
    let rows: Vec<[&str; 5]> = report
        .lines
        .iter()
        .map(|l| {
            [
                l.test_name.as_str(),
                l.value_verbatim.as_str(),
                l.unit.as_str(),
                l.normal_range_display.as_str(),
                l.flag.label(),
            ]
        })
        .collect();
    let mut widths = COLUMNS.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let table_row = |cells: &[&str; 5], suffix: Option<&str>| {
        let mut line = String::new();
        for (cell, w) in cells.iter().zip(widths) {
            let _ = write!(line, "{cell:<width$}", width = w + 2);
        }
        if let Some(suffix) = suffix {
            line.push_str(suffix);
        }
        line.trim_end().to_string()
    };

    let mut out = String::new();
    let status = match &report.status {
        ReportStatus::Draft => "DRAFT".to_string(),
        ReportStatus::SignedOff { supervisor_id, at } => {
            format!("SIGNED OFF by {supervisor_id} at {}", at.to_rfc3339())
        }
    };
    let p = &report.patient;
    let _ = writeln!(out, "Report {}  {status}", report.report_id);
    let _ = writeln!(
        out,
        "Patient: {}  {}  DOB {}  Age {}",
        p.patient_uid, p.full_name, p.dob, p.stated_age_years
    );
    let _ = writeln!(out, "Built: {}", report.built_at.to_rfc3339());
    out.push('\n');
    let _ = writeln!(out, "{}", table_row(&COLUMNS, None));
    for (line, cells) in report.lines.iter().zip(&rows) {
        let suffix = line.override_reason.as_ref().map(|r| format!("overridden: {r}"));
        let _ = writeln!(out, "{}", table_row(cells, suffix.as_deref()));
    }
    out
}

#[derive(Serialize)]
struct StructuredOut<'a> {
    record_version: u32,
    report: &'a Report,
}

#[derive(Deserialize)]
struct StructuredIn {
    record_version: u32,
    report: Report,
}

pub fn to_structured(report: &Report) -> Vec<u8> {
    let mut out = serde_json::to_vec(&StructuredOut {
        record_version: STRUCTURED_VERSION,
        report,
    })
    .expect("reports always serialize");
    out.push(b'\n');
    out
}

pub fn from_structured(bytes: &[u8]) -> Result<Report> {
    let parsed: StructuredIn =
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedFile(format!("structured report: {e}")))?;
    if parsed.record_version != STRUCTURED_VERSION {
        return Err(Error::MalformedFile(format!(
            "unsupported structured report version {}",
            parsed.record_version
        )));
    }
    Ok(parsed.report)
}
