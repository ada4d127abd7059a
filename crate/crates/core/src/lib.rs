//! Core of the clinical data repository.
//!
//! The crate is organised around the lifecycle of one laboratory result:
//!
//! 1. [`range`] parses the free-text reference ranges of the master table and
//!    classifies observations against them.
//! 2. [`catalog`] holds the versioned, specialist-verified master table.
//! 3. [`patient`] registers patients with strict ID / date-of-birth / age checks.
//! 4. [`validation`] runs the entry-time (level 1) and report-time (level 2) checks.
//! 5. [`repository`] is the event-sourced store that owns the flag, override,
//!    reject and finalize lifecycle, persisted through [`audit`].
//! 6. [`report`] assembles, renders and gates sign-off of patient reports.

pub mod access;
pub mod audit;
pub mod catalog;
pub mod clock;
pub mod error;
pub mod patient;
pub mod range;
pub mod report;
pub mod repository;
pub mod results;
pub mod validation;

pub use access::{Operation, Role};
pub use catalog::{CatalogEntry, CatalogSnapshot, ImportReport, RangeLookup, Verification};
pub use clock::{Clock, FixedClock, SteppingClock, SystemClock};
pub use error::{Error, ErrorKind, Result};
pub use patient::{compute_age, NewPatient, Patient, UidPolicy};
pub use range::{classify, format_range, parse_range, Classification, RangeSpec, UnitTag};
pub use report::{Flag, Report, ReportFormat, ReportLine, ReportStatus};
pub use repository::{Repository, SubmitResult};
pub use results::{EntryId, EntryStatus, ObservedValue, OverrideRecord, RejectionRecord, ResultEntry};
pub use rust_decimal::Decimal;
pub use validation::{level1_check, level2_recheck, CheckLevel, Recheck, ValidationOutcome};

/// Reference-range master table shipped with the repository (28 biochemistry tests).
pub const BUNDLED_CATALOG_CSV: &str = include_str!("../data/reference_ranges.csv");
