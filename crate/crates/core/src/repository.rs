//! Event-sourced store for the catalog, patients, result entries and signed
//! reports.
//!
//! Every successful mutation is decided against the current state, turned
//! into one or more [`AuditEvent`]s, applied to a copy of the state, written
//! to the log, and only then made visible. Replaying the log from empty runs
//! the same `apply` step and therefore rebuilds the same state.
//!
//! Draft reports are not part of the durable state; they can always be built
//! again. Only sign-off persists a report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, EventLog, Payload};
use crate::catalog::{prepare_import, Catalog, CatalogEntry, ImportReport};
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::patient::{check_registration, NewPatient, Patient, PatientRegistry, UidPolicy};
use crate::range::UnitTag;
use crate::report::{self, Report, ReportFormat, ReportLine, ReportStatus};
use crate::results::{EntryId, EntryStatus, OverrideRecord, RejectionRecord, ReportId, ResultEntry};
use crate::validation::{level1_check, level2_recheck, Recheck};

/// A result as submitted by an operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub patient_uid: String,
    pub slno: u32,
    pub value: String,
    #[serde(default)]
    pub unit: Option<String>,
}

/// Durable state: everything the event log determines.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub catalog: Catalog,
    pub patients: PatientRegistry,
    pub entries: BTreeMap<EntryId, ResultEntry>,
    pub overrides: BTreeMap<EntryId, OverrideRecord>,
    pub rejections: BTreeMap<EntryId, RejectionRecord>,
    pub reports: BTreeMap<ReportId, Report>,
    pub last_sequence_no: u64,
}

fn corrupt(event: &AuditEvent, what: impl std::fmt::Display) -> Error {
    Error::LogCorrupt(format!("event {}: {what}", event.sequence_no))
}

impl State {
    fn apply(&mut self, event: &AuditEvent) -> Result<()> {
        if event.sequence_no != self.last_sequence_no + 1 {
            return Err(corrupt(event, format!("expected sequence {}", self.last_sequence_no + 1)));
        }
        if event.action != event.payload.action() {
            return Err(corrupt(event, "action does not match payload"));
        }
        match &event.payload {
            Payload::CatalogImported { catalog_version, entries } => {
                self.catalog.apply_import(*catalog_version, entries)?;
            }
            Payload::CatalogVerified { catalog_version, slno, specialist_id } => {
                self.catalog
                    .apply_verify(*catalog_version, *slno, specialist_id, event.at)?;
            }
            Payload::CatalogEdited { catalog_version, entry } => {
                self.catalog.apply_edit(*catalog_version, entry)?;
            }
            Payload::PatientRegistered { patient } => {
                self.patients.insert(patient.clone())?;
            }
            Payload::Submitted { entry } => {
                if self.patients.get(&entry.patient_uid).is_none() {
                    return Err(corrupt(event, "entry for unknown patient"));
                }
                if self.entries.insert(entry.entry_id, entry.clone()).is_some() {
                    return Err(corrupt(event, format!("duplicate entry {}", entry.entry_id)));
                }
            }
            Payload::Overridden { record } => {
                self.transition(event, record.entry_id, EntryStatus::Overridden)?;
                self.overrides.insert(record.entry_id, record.clone());
            }
            Payload::Rejected { record } => {
                self.transition(event, record.entry_id, EntryStatus::Rejected)?;
                self.rejections.insert(record.entry_id, record.clone());
            }
            Payload::Finalized { entry_id, .. } => {
                self.transition(event, *entry_id, EntryStatus::Finalized)?;
            }
            Payload::SignedOff { report } => {
                if !report.is_signed_off() {
                    return Err(corrupt(event, "signed-off payload holds a draft"));
                }
                if self.reports.insert(report.report_id, report.clone()).is_some() {
                    return Err(corrupt(event, format!("report {} signed twice", report.report_id)));
                }
            }
        }
        self.last_sequence_no = event.sequence_no;
        Ok(())
    }

    fn transition(&mut self, event: &AuditEvent, id: EntryId, next: EntryStatus) -> Result<()> {
        let entry = self
            .entries
            .get_mut(&id)
            .ok_or_else(|| corrupt(event, format!("unknown entry {id}")))?;
        if !entry.status.can_become(next) {
            return Err(corrupt(event, format!("illegal transition {} -> {next} for {id}", entry.status)));
        }
        entry.status = next;
        Ok(())
    }
}

pub struct Repository {
    state: State,
    events: Vec<AuditEvent>,
    entry_events: HashMap<EntryId, Vec<usize>>,
    log: Option<EventLog>,
    clock: Arc<dyn Clock>,
    uid_policy: UidPolicy,
    drafts: BTreeMap<ReportId, Report>,
    last_report_no: u64,
}

impl std::fmt::Debug for Repository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Repository")
            .field("events", &self.events.len())
            .field("entries", &self.state.entries.len())
            .field("drafts", &self.drafts.len())
            .field("log", &self.log.as_ref().map(|l| l.dir().to_path_buf()))
            .finish()
    }
}

fn require_actor(actor: &str) -> Result<()> {
    if actor.trim().is_empty() {
        return Err(Error::MissingActor);
    }
    Ok(())
}

fn require_reason(reason: &str) -> Result<String> {
    let reason = reason.trim();
    if reason.is_empty() {
        return Err(Error::EmptyReason);
    }
    Ok(reason.to_string())
}

impl Repository {
    /// An empty store with no log file.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            state: State::default(),
            events: Vec::new(),
            entry_events: HashMap::new(),
            log: None,
            clock,
            uid_policy: UidPolicy::default(),
            drafts: BTreeMap::new(),
            last_report_no: 0,
        }
    }

    pub fn with_uid_policy(mut self, policy: UidPolicy) -> Self {
        self.uid_policy = policy;
        self
    }

    /// Rebuilds a store from recorded events.
    pub fn replay(events: impl IntoIterator<Item = AuditEvent>, clock: Arc<dyn Clock>) -> Result<Self> {
        let mut repo = Self::in_memory(clock);
        for event in events {
            repo.state.apply(&event)?;
            repo.record(event);
        }
        repo.last_report_no = repo.state.reports.keys().last().map_or(0, |id| id.0);
        Ok(repo)
    }

    /// Opens the file-backed store in `dir`, replaying its log.
    pub fn open(dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self> {
        let (log, events) = EventLog::open(dir)?;
        let mut repo = Self::replay(events, clock)?;
        repo.log = Some(log);
        Ok(repo)
    }

    fn record(&mut self, event: AuditEvent) {
        if let Some(id) = event.payload.entry_id() {
            self.entry_events.entry(id).or_default().push(self.events.len());
        }
        self.events.push(event);
    }

    /// Applies `payloads` as one atomic batch stamped `at`.
    fn commit(&mut self, at: DateTime<Utc>, actor: &str, payloads: Vec<Payload>) -> Result<()> {
        let mut next = self.state.clone();
        let mut batch = Vec::with_capacity(payloads.len());
        for payload in payloads {
            let event = AuditEvent {
                sequence_no: next.last_sequence_no + 1,
                at,
                actor: actor.to_string(),
                action: payload.action(),
                payload,
            };
            next.apply(&event)
                .map_err(|e| Error::StoreInconsistent(format!("refusing to write event: {e}")))?;
            batch.push(event);
        }
        if let Some(log) = self.log.as_mut() {
            log.append(&batch)?;
        }
        self.state = next;
        for event in batch {
            self.record(event);
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Reads
    // ------------------------------------------------------------------

    pub fn state(&self) -> &State {
        &self.state
    }

    /// Canonical serialization of the durable state.
    pub fn state_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.state).expect("state always serializes")
    }

    pub fn catalog(&self) -> &Catalog {
        &self.state.catalog
    }

    pub fn patients(&self) -> &PatientRegistry {
        &self.state.patients
    }

    pub fn find_patient(&self, query: &str) -> Vec<&Patient> {
        self.state.patients.find(query)
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn entry(&self, id: EntryId) -> Result<&ResultEntry> {
        self.state.entries.get(&id).ok_or_else(|| Error::UnknownEntry(id.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &ResultEntry> {
        self.state.entries.values()
    }

    pub fn override_for(&self, id: EntryId) -> Option<&OverrideRecord> {
        self.state.overrides.get(&id)
    }

    /// Flagged entries awaiting a supervisor, oldest first.
    pub fn review_queue(&self) -> Vec<&ResultEntry> {
        self.entries().filter(|e| e.status == EntryStatus::Flagged).collect()
    }

    pub fn audit_trail(&self, id: EntryId) -> Result<Vec<&AuditEvent>> {
        self.entry(id)?;
        Ok(self
            .entry_events
            .get(&id)
            .map(|idx| idx.iter().map(|i| &self.events[*i]).collect())
            .unwrap_or_default())
    }

    pub fn recheck_all(&self) -> Result<Vec<Recheck>> {
        level2_recheck(&self.state.catalog, self.state.entries.values())
    }

    pub fn report(&self, id: ReportId) -> Result<&Report> {
        self.state
            .reports
            .get(&id)
            .or_else(|| self.drafts.get(&id))
            .ok_or_else(|| Error::UnknownReport(id.to_string()))
    }

    pub fn signed_reports(&self) -> impl Iterator<Item = &Report> {
        self.state.reports.values()
    }

    pub fn drafts(&self) -> impl Iterator<Item = &Report> {
        self.drafts.values()
    }

    /// Re-adopts drafts kept outside the store (for example between CLI
    /// invocations). Drafts whose id is already signed or whose patient is
    /// unknown are dropped.
    pub fn restore_drafts(&mut self, drafts: impl IntoIterator<Item = Report>) {
        for draft in drafts {
            let id = draft.report_id;
            if draft.is_signed_off()
                || self.state.reports.contains_key(&id)
                || self.state.patients.get(&draft.patient.patient_uid).is_none()
            {
                continue;
            }
            self.last_report_no = self.last_report_no.max(id.0);
            self.drafts.insert(id, draft);
        }
    }

    pub fn render_report(&self, id: ReportId, format: ReportFormat) -> Result<Vec<u8>> {
        Ok(report::render(self.report(id)?, format))
    }

    // ------------------------------------------------------------------
    // Catalog
    // ------------------------------------------------------------------

    pub fn import_catalog(&mut self, csv_text: &str, actor: &str) -> Result<ImportReport> {
        require_actor(actor)?;
        let prepared = prepare_import(self.state.catalog.current(), csv_text)?;
        if !prepared.entries.is_empty() {
            let payload = Payload::CatalogImported {
                catalog_version: self.state.catalog.version() + 1,
                entries: prepared.entries,
            };
            self.commit(self.clock.now(), actor, vec![payload])?;
        }
        Ok(prepared.report)
    }

    pub fn verify_entry(&mut self, slno: u32, specialist_id: &str) -> Result<CatalogEntry> {
        require_actor(specialist_id)?;
        self.state.catalog.check_verify(slno)?;
        let payload = Payload::CatalogVerified {
            catalog_version: self.state.catalog.version() + 1,
            slno,
            specialist_id: specialist_id.to_string(),
        };
        self.commit(self.clock.now(), specialist_id, vec![payload])?;
        self.state.catalog.current().get(slno).cloned()
    }

    /// Replaces the range text of an entry. A changed range must be verified
    /// again before it can back a signed report.
    pub fn edit_range(&mut self, slno: u32, range_text: &str, actor: &str) -> Result<CatalogEntry> {
        require_actor(actor)?;
        let entry = self.state.catalog.prepare_edit(slno, range_text)?;
        let payload = Payload::CatalogEdited {
            catalog_version: self.state.catalog.version() + 1,
            entry,
        };
        self.commit(self.clock.now(), actor, vec![payload])?;
        self.state.catalog.current().get(slno).cloned()
    }

    // ------------------------------------------------------------------
    // Patients
    // ------------------------------------------------------------------

    /// Registers a patient. Age is validated as of `as_of` (today when
    /// `None`); an explicit date also becomes the registration time, at
    /// midnight UTC.
    pub fn register_patient(
        &mut self,
        request: NewPatient,
        as_of: Option<NaiveDate>,
        actor: &str,
    ) -> Result<Patient> {
        require_actor(actor)?;
        let now = self.clock.now();
        let (as_of, registered_at) = match as_of {
            Some(date) => (date, date.and_time(NaiveTime::MIN).and_utc()),
            None => (now.date_naive(), now),
        };
        let request = NewPatient {
            full_name: request.full_name.trim().to_string(),
            contact: request.contact.map(|c| c.trim().to_string()).filter(|c| !c.is_empty()),
            ..request
        };
        check_registration(&self.uid_policy, &self.state.patients, &request, as_of)?;
        let patient = Patient {
            patient_uid: request.patient_uid,
            full_name: request.full_name,
            dob: request.dob,
            stated_age_years: request.stated_age_years,
            contact: request.contact,
            registered_at,
        };
        self.commit(now, actor, vec![Payload::PatientRegistered { patient: patient.clone() }])?;
        Ok(patient)
    }

    // ------------------------------------------------------------------
    // Results
    // ------------------------------------------------------------------

    pub fn submit_result(&mut self, request: SubmitResult, operator_id: &str) -> Result<ResultEntry> {
        require_actor(operator_id)?;
        if self.state.patients.get(&request.patient_uid).is_none() {
            return Err(Error::UnknownPatient(request.patient_uid));
        }
        let unit = UnitTag::parse(request.unit.as_deref().unwrap_or_default())?;
        let now = self.clock.now();
        let checked = level1_check(self.state.catalog.current(), request.slno, &request.value, &unit, now)?;
        let status = if checked.outcome.classification.is_violation() {
            EntryStatus::Flagged
        } else {
            EntryStatus::Accepted
        };
        let entry = ResultEntry {
            entry_id: EntryId(self.state.entries.len() as u64 + 1),
            patient_uid: request.patient_uid,
            slno: request.slno,
            value: checked.value,
            unit,
            entered_by: operator_id.to_string(),
            entered_at: now,
            catalog_version: checked.outcome.catalog_version,
            level1: checked.outcome,
            status,
        };
        self.commit(now, operator_id, vec![Payload::Submitted { entry: entry.clone() }])?;
        Ok(entry)
    }

    fn flagged_entry(&self, id: EntryId) -> Result<&ResultEntry> {
        let entry = self.entry(id)?;
        if entry.status != EntryStatus::Flagged {
            return Err(Error::NotFlagged {
                entry_id: id.to_string(),
                status: entry.status.to_string(),
            });
        }
        Ok(entry)
    }

    /// Supervised acceptance of a flagged value. The supervisor must not be
    /// the operator who entered it.
    pub fn apply_override(&mut self, id: EntryId, supervisor_id: &str, reason: &str) -> Result<ResultEntry> {
        require_actor(supervisor_id)?;
        let entry = self.flagged_entry(id)?;
        let reason = require_reason(reason)?;
        if entry.entered_by == supervisor_id {
            return Err(Error::SelfOverride {
                entry_id: id.to_string(),
                actor: supervisor_id.to_string(),
            });
        }
        let at = self.clock.now();
        let record = OverrideRecord {
            entry_id: id,
            supervisor_id: supervisor_id.to_string(),
            reason,
            at,
        };
        self.commit(at, supervisor_id, vec![Payload::Overridden { record }])?;
        self.entry(id).cloned()
    }

    pub fn reject_entry(&mut self, id: EntryId, supervisor_id: &str, reason: &str) -> Result<ResultEntry> {
        require_actor(supervisor_id)?;
        self.flagged_entry(id)?;
        let reason = require_reason(reason)?;
        let at = self.clock.now();
        let record = RejectionRecord {
            entry_id: id,
            supervisor_id: supervisor_id.to_string(),
            reason,
            at,
        };
        self.commit(at, supervisor_id, vec![Payload::Rejected { record }])?;
        self.entry(id).cloned()
    }

    // ------------------------------------------------------------------
    // Reports
    // ------------------------------------------------------------------

    fn line_for(&self, entry: &ResultEntry) -> Result<ReportLine> {
        let snapshot = self
            .state
            .catalog
            .at_version(entry.catalog_version)
            .ok_or(Error::UnknownSlno(entry.slno))?;
        let test = snapshot.get(entry.slno)?;
        Ok(ReportLine::from_entry(entry, &test.test_name, self.override_for(entry.entry_id)))
    }

    fn ensure_consistent<'a>(&self, entries: impl IntoIterator<Item = &'a ResultEntry>) -> Result<()> {
        let disagreements: Vec<String> = level2_recheck(&self.state.catalog, entries)?
            .into_iter()
            .filter(|r| !r.agrees_with_level1)
            .map(|r| format!("{} re-derives as {}", r.entry_id, r.classification))
            .collect();
        if disagreements.is_empty() {
            Ok(())
        } else {
            Err(Error::StoreInconsistent(disagreements.join("; ")))
        }
    }

    fn overrides_for(&self, lines: &[ReportLine]) -> Vec<OverrideRecord> {
        lines
            .iter()
            .filter_map(|l| self.override_for(l.entry_id).cloned())
            .collect()
    }

    /// Builds a draft report over every non-rejected entry of the patient in
    /// the window (inclusive), ordered by catalog serial number.
    pub fn build_report(
        &mut self,
        patient_uid: &str,
        since: Option<DateTime<Utc>>,
        until: Option<DateTime<Utc>>,
    ) -> Result<Report> {
        let patient = self
            .state
            .patients
            .get(patient_uid)
            .cloned()
            .ok_or_else(|| Error::UnknownPatient(patient_uid.to_string()))?;
        let mut included: Vec<&ResultEntry> = self
            .entries()
            .filter(|e| e.patient_uid == patient_uid && e.status != EntryStatus::Rejected)
            .filter(|e| since.is_none_or(|s| e.entered_at >= s) && until.is_none_or(|u| e.entered_at <= u))
            .collect();
        included.sort_by_key(|e| (e.slno, e.entry_id));
        self.ensure_consistent(included.iter().copied())?;
        let lines = included
            .iter()
            .map(|e| self.line_for(e))
            .collect::<Result<Vec<_>>>()?;
        self.last_report_no += 1;
        let report = Report {
            report_id: ReportId(self.last_report_no),
            patient,
            since,
            until,
            overrides: self.overrides_for(&lines),
            lines,
            status: ReportStatus::Draft,
            built_at: self.clock.now(),
            catalog_version: self.state.catalog.version(),
        };
        self.drafts.insert(report.report_id, report.clone());
        Ok(report)
    }

    /// Signs off a draft. Every line must be in range, indeterminate or
    /// overridden, and every test must be specialist-verified. The included
    /// entries are finalized in the same atomic batch as the report.
    pub fn sign_off(&mut self, id: ReportId, supervisor_id: &str) -> Result<Report> {
        require_actor(supervisor_id)?;
        if self.state.reports.contains_key(&id) {
            return Err(Error::AlreadySignedOff(id.to_string()));
        }
        let draft = self
            .drafts
            .get(&id)
            .ok_or_else(|| Error::UnknownReport(id.to_string()))?;

        // Lines are refreshed from the live entries: overrides and rejections
        // made after the draft was built count.
        let mut current: Vec<&ResultEntry> = Vec::with_capacity(draft.lines.len());
        for line in &draft.lines {
            let entry = self.entry(line.entry_id)?;
            if entry.status != EntryStatus::Rejected {
                current.push(entry);
            }
        }
        let unresolved: Vec<String> = current
            .iter()
            .filter(|e| e.status == EntryStatus::Flagged)
            .map(|e| format!("{} {}", e.entry_id, e.level1.classification))
            .collect();
        if !unresolved.is_empty() {
            return Err(Error::UnresolvedViolations(unresolved));
        }
        self.ensure_consistent(current.iter().copied())?;
        let snapshot = self.state.catalog.current();
        let unverified: BTreeSet<u32> = current
            .iter()
            .filter(|e| !snapshot.get(e.slno).is_ok_and(|c| c.verification.is_verified()))
            .map(|e| e.slno)
            .collect();
        if !unverified.is_empty() {
            return Err(Error::UnverifiedCatalogEntries(unverified.into_iter().collect()));
        }

        let at = self.clock.now();
        let mut payloads: Vec<Payload> = current
            .iter()
            .filter(|e| e.status != EntryStatus::Finalized)
            .map(|e| Payload::Finalized { entry_id: e.entry_id, report_id: id })
            .collect();
        let lines = current
            .iter()
            .map(|e| {
                let mut finalized = (*e).clone();
                finalized.status = EntryStatus::Finalized;
                self.line_for(&finalized)
            })
            .collect::<Result<Vec<_>>>()?;
        let signed = Report {
            overrides: self.overrides_for(&lines),
            lines,
            status: ReportStatus::SignedOff {
                supervisor_id: supervisor_id.to_string(),
                at,
            },
            catalog_version: snapshot.version,
            ..draft.clone()
        };
        payloads.push(Payload::SignedOff { report: signed.clone() });
        self.commit(at, supervisor_id, payloads)?;
        self.drafts.remove(&id);
        Ok(signed)
    }

    /// Test hook: overwrites a stored entry without going through the log.
    #[doc(hidden)]
    pub fn tamper_entry(&mut self, id: EntryId, edit: impl FnOnce(&mut ResultEntry)) {
        if let Some(entry) = self.state.entries.get_mut(&id) {
            edit(entry);
        }
    }
}
