use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad family of an [`Error`]; front ends map these onto HTTP statuses and
/// exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    /// The caller supplied bad data and must correct it.
    Validation,
    /// A referenced resource does not exist.
    NotFound,
    /// The actor is not allowed to perform the action.
    Forbidden,
    /// The request collides with existing data or the current lifecycle state.
    Conflict,
    /// Storage failure or a broken internal invariant.
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("malformed range {input:?}: {reason}")]
    MalformedRange { input: String, reason: String },
    #[error("malformed catalog file: {0}")]
    MalformedFile(String),
    #[error("malformed catalog row: {0}")]
    MalformedRow(String),
    #[error("serial number {0} already exists in the catalog")]
    DuplicateSlno(u32),
    #[error("test name {0:?} already exists in the catalog")]
    DuplicateTestName(String),
    #[error("no catalog entry with serial number {0}")]
    UnknownSlno(u32),

    #[error("patient id {uid:?} does not match pattern {pattern}")]
    MalformedUid { uid: String, pattern: String },
    #[error("patient id {0:?} is already registered")]
    DuplicateUid(String),
    #[error("patient name must not be blank")]
    MissingName,
    #[error("an actor id is required")]
    MissingActor,
    #[error("date of birth {dob} is after {as_of}")]
    FutureDob { dob: NaiveDate, as_of: NaiveDate },
    #[error("stated age {stated} does not match date of birth (computed age {computed})")]
    AgeDobMismatch { stated: u32, computed: u32 },

    #[error("value {0:?} is not a number")]
    NonNumericValue(String),
    #[error("value must not be blank")]
    EmptyValue,
    #[error("unit {0:?} is not a valid unit token")]
    MalformedUnit(String),
    #[error("no patient with id {0:?}")]
    UnknownPatient(String),
    #[error("no result entry with id {0:?}")]
    UnknownEntry(String),
    #[error("entry {entry_id} is {status}, not Flagged")]
    NotFlagged { entry_id: String, status: String },
    #[error("a non-blank reason is required")]
    EmptyReason,
    #[error("{actor:?} entered {entry_id} and cannot override it")]
    SelfOverride { entry_id: String, actor: String },

    #[error("level-2 recheck disagrees with stored data: {0}")]
    StoreInconsistent(String),
    #[error("report has unresolved violations: {}", .0.join(", "))]
    UnresolvedViolations(Vec<String>),
    #[error("report references unverified catalog entries: {0:?}")]
    UnverifiedCatalogEntries(Vec<u32>),
    #[error("no report with id {0:?}")]
    UnknownReport(String),
    #[error("report {0} is already signed off")]
    AlreadySignedOff(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("event log is corrupt: {0}")]
    LogCorrupt(String),
}

impl Error {
    /// Stable identifier shared by the API error body and CLI stderr.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedRange { .. } => "MalformedRange",
            Error::MalformedFile(_) => "MalformedFile",
            Error::MalformedRow(_) => "MalformedRow",
            Error::DuplicateSlno(_) => "DuplicateSlno",
            Error::DuplicateTestName(_) => "DuplicateTestName",
            Error::UnknownSlno(_) => "UnknownSlno",
            Error::MalformedUid { .. } => "MalformedUid",
            Error::DuplicateUid(_) => "DuplicateUid",
            Error::MissingName => "MissingName",
            Error::MissingActor => "MissingActor",
            Error::FutureDob { .. } => "FutureDob",
            Error::AgeDobMismatch { .. } => "AgeDobMismatch",
            Error::NonNumericValue(_) => "NonNumericValue",
            Error::EmptyValue => "EmptyValue",
            Error::MalformedUnit(_) => "MalformedUnit",
            Error::UnknownPatient(_) => "UnknownPatient",
            Error::UnknownEntry(_) => "UnknownEntry",
            Error::NotFlagged { .. } => "NotFlagged",
            Error::EmptyReason => "EmptyReason",
            Error::SelfOverride { .. } => "SelfOverride",
            Error::StoreInconsistent(_) => "StoreInconsistent",
            Error::UnresolvedViolations(_) => "UnresolvedViolations",
            Error::UnverifiedCatalogEntries(_) => "UnverifiedCatalogEntries",
            Error::UnknownReport(_) => "UnknownReport",
            Error::AlreadySignedOff(_) => "AlreadySignedOff",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::Storage(_) => "Storage",
            Error::LogCorrupt(_) => "LogCorrupt",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            MalformedRange { .. } | MalformedFile(_) | MalformedRow(_) | MalformedUid { .. }
            | MissingName | MissingActor | FutureDob { .. } | AgeDobMismatch { .. } | NonNumericValue(_)
            | EmptyValue | MalformedUnit(_) | EmptyReason | ConfigInvalid(_) => {
                ErrorKind::Validation
            }
            UnknownSlno(_) | UnknownPatient(_) | UnknownEntry(_) | UnknownReport(_) => {
                ErrorKind::NotFound
            }
            SelfOverride { .. } => ErrorKind::Forbidden,
            DuplicateSlno(_) | DuplicateTestName(_) | DuplicateUid(_) | NotFlagged { .. }
            | UnresolvedViolations(_) | UnverifiedCatalogEntries(_) | AlreadySignedOff(_) => {
                ErrorKind::Conflict
            }
            StoreInconsistent(_) | Storage(_) | LogCorrupt(_) => ErrorKind::Internal,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Storage(err.to_string())
    }
}
