//! Patient registry: unique ID, date of birth and stated age are validated
//! against each other before anything is stored.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alphanumeric with dashes, at least four characters.
pub const DEFAULT_UID_PATTERN: &str = "^[A-Za-z0-9][A-Za-z0-9-]{3,}$";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_uid: String,
    pub full_name: String,
    pub dob: NaiveDate,
    pub stated_age_years: u32,
    pub contact: Option<String>,
    pub registered_at: DateTime<Utc>,
}

/// Registration request as typed by the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewPatient {
    pub patient_uid: String,
    pub full_name: String,
    pub dob: NaiveDate,
    pub stated_age_years: u32,
    #[serde(default)]
    pub contact: Option<String>,
}

#[derive(Debug, Clone)]
pub struct UidPolicy {
    pattern: Regex,
}

impl UidPolicy {
    pub fn new(pattern: &str) -> Result<Self> {
        Regex::new(pattern)
            .map(|pattern| Self { pattern })
            .map_err(|e| Error::ConfigInvalid(format!("uid_pattern: {e}")))
    }

    pub fn check(&self, uid: &str) -> Result<()> {
        if uid.is_empty() || !self.pattern.is_match(uid) {
            return Err(Error::MalformedUid {
                uid: uid.to_string(),
                pattern: self.pattern.as_str().to_string(),
            });
        }
        Ok(())
    }

    pub fn pattern(&self) -> &str {
        self.pattern.as_str()
    }
}

impl Default for UidPolicy {
    fn default() -> Self {
        Self::new(DEFAULT_UID_PATTERN).expect("default pattern compiles")
    }
}

/// The date in `year` on which someone born on `dob` completes a year.
/// Feb-29 birthdays complete on Mar-01 in non-leap years.
fn birthday_in(dob: NaiveDate, year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, dob.month(), dob.day())
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(year, 3, 1).expect("valid date"))
}

/// Completed calendar years between `dob` and `as_of`.
pub fn compute_age(dob: NaiveDate, as_of: NaiveDate) -> Result<u32> {
    if dob > as_of {
        return Err(Error::FutureDob { dob, as_of });
    }
    let mut years = as_of.year() - dob.year();
    if as_of < birthday_in(dob, as_of.year()) {
        years -= 1;
    }
    Ok(years as u32)
}

/// Validates a registration request. `existing` is consulted for uniqueness.
pub fn check_registration(
    policy: &UidPolicy,
    registry: &PatientRegistry,
    request: &NewPatient,
    as_of: NaiveDate,
) -> Result<()> {
    policy.check(&request.patient_uid)?;
    if registry.get(&request.patient_uid).is_some() {
        return Err(Error::DuplicateUid(request.patient_uid.clone()));
    }
    if request.full_name.trim().is_empty() {
        return Err(Error::MissingName);
    }
    let computed = compute_age(request.dob, as_of)?;
    if computed != request.stated_age_years {
        return Err(Error::AgeDobMismatch {
            stated: request.stated_age_years,
            computed,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRegistry {
    patients: BTreeMap<String, Patient>,
    /// Uids in registration order.
    order: Vec<String>,
}

impl PatientRegistry {
    pub fn get(&self, uid: &str) -> Option<&Patient> {
        self.patients.get(uid)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn all(&self) -> impl Iterator<Item = &Patient> {
        self.order.iter().filter_map(|uid| self.patients.get(uid))
    }

    pub(crate) fn insert(&mut self, patient: Patient) -> Result<()> {
        if self.patients.contains_key(&patient.patient_uid) {
            return Err(Error::DuplicateUid(patient.patient_uid));
        }
        self.order.push(patient.patient_uid.clone());
        self.patients.insert(patient.patient_uid.clone(), patient);
        Ok(())
    }

    /// Exact uid match first, then case-insensitive name matches, each group
    /// ordered by registration time. Blank queries match nothing.
    pub fn find(&self, query: &str) -> Vec<&Patient> {
        let query = query.trim();
        if query.is_empty() {
            return Vec::new();
        }
        let mut found: Vec<&Patient> = self.get(query).into_iter().collect();
        let needle = query.to_lowercase();
        let mut by_name: Vec<&Patient> = self
            .all()
            .filter(|p| p.patient_uid != query && p.full_name.to_lowercase().contains(&needle))
            .collect();
        by_name.sort_by_key(|p| p.registered_at);
        found.extend(by_name);
        found
    }
}
