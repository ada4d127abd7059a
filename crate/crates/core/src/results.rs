//! Transactional result entries and their review lifecycle.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::range::UnitTag;
use crate::validation::ValidationOutcome;

macro_rules! prefixed_id {
    ($name:ident, $prefix:literal, $unknown:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                s.strip_prefix($prefix)
                    .and_then(|n| n.parse::<u64>().ok())
                    .filter(|n| *n > 0)
                    .map($name)
                    .ok_or_else(|| Error::$unknown(s.to_string()))
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

prefixed_id!(EntryId, "E", UnknownEntry);
prefixed_id!(ReportId, "R", UnknownReport);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntryStatus {
    Accepted,
    Flagged,
    Overridden,
    Rejected,
    Finalized,
}

impl EntryStatus {
    /// Accepted→Finalized, Flagged→Overridden|Rejected, Overridden→Finalized.
    pub fn can_become(self, next: EntryStatus) -> bool {
        use EntryStatus::*;
        matches!(
            (self, next),
            (Accepted, Finalized) | (Flagged, Overridden) | (Flagged, Rejected) | (Overridden, Finalized)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, EntryStatus::Rejected | EntryStatus::Finalized)
    }
}

impl fmt::Display for EntryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What the operator typed, plus its parsed decimal when the test is numeric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedValue {
    pub verbatim: String,
    pub numeric: Option<Decimal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub entry_id: EntryId,
    pub patient_uid: String,
    pub slno: u32,
    pub value: ObservedValue,
    pub unit: UnitTag,
    pub entered_by: String,
    pub entered_at: DateTime<Utc>,
    pub level1: ValidationOutcome,
    pub catalog_version: u64,
    pub status: EntryStatus,
}

/// A supervisor's acceptance of an out-of-range value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub entry_id: EntryId,
    pub supervisor_id: String,
    pub reason: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub entry_id: EntryId,
    pub supervisor_id: String,
    pub reason: String,
    pub at: DateTime<Utc>,
}
