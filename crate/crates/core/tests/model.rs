//! Model-based test of the result lifecycle.
//!
//! Random command sequences run against the repository and a small shadow
//! model side by side. After each command the repository must agree with the
//! model, illegal commands must leave the state untouched, and the safety
//! properties must hold.

use std::collections::BTreeMap;
use std::sync::Arc;

use cdr_core::access::{permits, Operation, Role};
use cdr_core::results::{EntryId, ReportId};
use cdr_core::{
    Classification, EntryStatus, NewPatient, Repository, SteppingClock, SubmitResult, BUNDLED_CATALOG_CSV,
};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use proptest::prelude::*;

const ACTORS: [(&str, Role); 5] = [
    ("op1", Role::Operator),
    ("op2", Role::Operator),
    ("sup1", Role::Supervisor),
    ("sup2", Role::Supervisor),
    ("dr1", Role::Specialist),
];

#[derive(Debug, Clone)]
enum Cmd {
    Submit { slno: u32, value: &'static str, unit: &'static str, actor: usize },
    Override { entry: usize, actor: usize, blank: bool },
    Reject { entry: usize, actor: usize },
    Verify { slno: u32, actor: usize },
    Edit { slno: u32, actor: usize },
    Build { actor: usize },
    Sign { report: usize, actor: usize },
}

fn arb_cmd() -> impl Strategy<Value = Cmd> {
    let values = prop::sample::select(vec!["0.1", "5", "6.2", "100", "139", "140", "500", "abc"]);
    let units = prop::sample::select(vec!["", "mg/dl", "mEq/L", "mmol/L"]);
    let actor = 0..ACTORS.len();
    prop_oneof![
        4 => (1u32..=8, values, units, actor.clone())
            .prop_map(|(slno, value, unit, actor)| Cmd::Submit { slno, value, unit, actor }),
        2 => (0usize..12, actor.clone(), any::<bool>())
            .prop_map(|(entry, actor, blank)| Cmd::Override { entry, actor, blank }),
        1 => (0usize..12, actor.clone()).prop_map(|(entry, actor)| Cmd::Reject { entry, actor }),
        2 => (1u32..=8, actor.clone()).prop_map(|(slno, actor)| Cmd::Verify { slno, actor }),
        1 => (1u32..=8, actor.clone()).prop_map(|(slno, actor)| Cmd::Edit { slno, actor }),
        2 => actor.clone().prop_map(|actor| Cmd::Build { actor }),
        2 => (0usize..4, actor).prop_map(|(report, actor)| Cmd::Sign { report, actor }),
    ]
}

fn start() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-05-01T08:00:00Z").unwrap().with_timezone(&Utc)
}

fn fresh_repo() -> Repository {
    let clock = Arc::new(SteppingClock::new(start(), Duration::seconds(1)));
    let mut repo = Repository::in_memory(clock);
    repo.import_catalog(BUNDLED_CATALOG_CSV, "admin").unwrap();
    repo.register_patient(
        NewPatient {
            patient_uid: "P-0001".into(),
            full_name: "Asha Smith".into(),
            dob: NaiveDate::from_ymd_opt(1990, 3, 3).unwrap(),
            stated_age_years: 34,
            contact: None,
        },
        NaiveDate::from_ymd_opt(2024, 5, 1),
        "op1",
    )
    .unwrap();
    repo
}

#[derive(Default)]
struct Model {
    statuses: BTreeMap<EntryId, EntryStatus>,
    entered_by: BTreeMap<EntryId, &'static str>,
    verified: BTreeMap<u32, bool>,
    drafts: Vec<ReportId>,
    expected_events: usize,
}

fn check_safety(repo: &Repository) {
    for entry in repo.entries() {
        let violation = entry.level1.classification.is_violation();
        let has_override = repo.override_for(entry.entry_id).is_some();
        match entry.status {
            EntryStatus::Flagged => assert!(violation && !has_override),
            EntryStatus::Accepted => assert!(!violation),
            EntryStatus::Overridden => assert!(violation && has_override),
            EntryStatus::Finalized => assert!(!violation || has_override, "{entry:?}"),
            EntryStatus::Rejected => assert!(violation && !has_override),
        }
    }
    for report in repo.signed_reports() {
        let snapshot = repo.catalog().at_version(report.catalog_version).unwrap();
        for line in &report.lines {
            assert!(
                matches!(line.classification, Classification::InRange | Classification::Indeterminate)
                    || line.override_reason.is_some()
            );
            assert!(snapshot.get(line.slno).unwrap().verification.is_verified());
            assert_eq!(line.entry_status, EntryStatus::Finalized);
        }
    }
}

fn run(cmds: &[Cmd]) {
    let mut repo = fresh_repo();
    let mut model = Model { expected_events: repo.events().len(), ..Model::default() };

    for cmd in cmds {
        let before = repo.state_bytes();
        let ok = match *cmd {
            Cmd::Submit { slno, value, unit, actor } => {
                let (name, role) = ACTORS[actor];
                if !permits(role, Operation::SubmitResult) {
                    false
                } else {
                    let result = repo.submit_result(
                        SubmitResult {
                            patient_uid: "P-0001".into(),
                            slno,
                            value: value.into(),
                            unit: Some(unit.into()),
                        },
                        name,
                    );
                    assert_eq!(result.is_err(), value == "abc");
                    if let Ok(entry) = result {
                        let expected = if entry.level1.classification.is_violation() {
                            EntryStatus::Flagged
                        } else {
                            EntryStatus::Accepted
                        };
                        assert_eq!(entry.status, expected);
                        model.statuses.insert(entry.entry_id, expected);
                        model.entered_by.insert(entry.entry_id, name);
                        model.expected_events += 1;
                        true
                    } else {
                        false
                    }
                }
            }
            Cmd::Override { entry, actor, blank } => {
                let id = EntryId(entry as u64 + 1);
                let (name, role) = ACTORS[actor];
                let legal = permits(role, Operation::OverrideResult)
                    && model.statuses.get(&id) == Some(&EntryStatus::Flagged)
                    && !blank
                    && model.entered_by.get(&id) != Some(&name);
                if permits(role, Operation::OverrideResult) {
                    let reason = if blank { " " } else { "repeat confirmed" };
                    assert_eq!(repo.apply_override(id, name, reason).is_ok(), legal);
                }
                if legal {
                    model.statuses.insert(id, EntryStatus::Overridden);
                    model.expected_events += 1;
                }
                legal
            }
            Cmd::Reject { entry, actor } => {
                let id = EntryId(entry as u64 + 1);
                let (name, role) = ACTORS[actor];
                let legal = permits(role, Operation::RejectResult)
                    && model.statuses.get(&id) == Some(&EntryStatus::Flagged);
                if permits(role, Operation::RejectResult) {
                    assert_eq!(repo.reject_entry(id, name, "bad sample").is_ok(), legal);
                }
                if legal {
                    model.statuses.insert(id, EntryStatus::Rejected);
                    model.expected_events += 1;
                }
                legal
            }
            Cmd::Verify { slno, actor } => {
                let (name, role) = ACTORS[actor];
                let legal = permits(role, Operation::VerifyCatalog);
                if legal {
                    repo.verify_entry(slno, name).unwrap();
                    model.verified.insert(slno, true);
                    model.expected_events += 1;
                }
                legal
            }
            Cmd::Edit { slno, actor } => {
                let (name, role) = ACTORS[actor];
                let legal = permits(role, Operation::EditCatalog);
                if legal {
                    let current = repo.catalog().current().get(slno).unwrap().range_text.clone();
                    let text = if current.ends_with("mg/dl") { "1-1000 mg/dl" } else { "1-1000 mEq/L" };
                    let changed = current != text;
                    repo.edit_range(slno, text, name).unwrap();
                    if changed {
                        model.verified.insert(slno, false);
                    }
                    model.expected_events += 1;
                }
                legal
            }
            Cmd::Build { actor } => {
                let (_, role) = ACTORS[actor];
                if permits(role, Operation::BuildReport) {
                    let report = repo.build_report("P-0001", None, None).unwrap();
                    let expected: Vec<EntryId> = model
                        .statuses
                        .iter()
                        .filter(|(_, s)| **s != EntryStatus::Rejected)
                        .map(|(id, _)| *id)
                        .collect();
                    let mut got: Vec<EntryId> = report.lines.iter().map(|l| l.entry_id).collect();
                    got.sort();
                    assert_eq!(got, expected);
                    model.drafts.push(report.report_id);
                }
                false
            }
            Cmd::Sign { report, actor } => {
                let (name, role) = ACTORS[actor];
                let Some(&id) = model.drafts.get(report) else { continue };
                if !permits(role, Operation::SignOffReport) {
                    false
                } else {
                    let draft = repo.report(id).unwrap().clone();
                    let live: Vec<EntryId> = draft
                        .lines
                        .iter()
                        .map(|l| l.entry_id)
                        .filter(|e| model.statuses[e] != EntryStatus::Rejected)
                        .collect();
                    let legal = !draft.is_signed_off()
                        && live.iter().all(|e| model.statuses[e] != EntryStatus::Flagged)
                        && live.iter().all(|e| {
                            let slno = repo.entry(*e).unwrap().slno;
                            model.verified.get(&slno).copied().unwrap_or(false)
                        });
                    assert_eq!(repo.sign_off(id, name).is_ok(), legal, "{draft:?}");
                    if legal {
                        let newly = live
                            .iter()
                            .filter(|e| model.statuses[e] != EntryStatus::Finalized)
                            .count();
                        for e in &live {
                            model.statuses.insert(*e, EntryStatus::Finalized);
                        }
                        model.expected_events += newly + 1;
                    }
                    legal
                }
            }
        };
        if !ok {
            assert_eq!(repo.state_bytes(), before, "refused command changed state: {cmd:?}");
        }
        for (id, status) in &model.statuses {
            assert_eq!(repo.entry(*id).unwrap().status, *status);
        }
        assert_eq!(repo.events().len(), model.expected_events);
        check_safety(&repo);
    }

    let seqs: Vec<u64> = repo.events().iter().map(|e| e.sequence_no).collect();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    assert!(repo.recheck_all().unwrap().iter().all(|r| r.agrees_with_level1));
    let clock = Arc::new(SteppingClock::new(start(), Duration::seconds(1)));
    let replayed = Repository::replay(repo.events().to_vec(), clock).unwrap();
    assert_eq!(replayed.state_bytes(), repo.state_bytes());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lifecycle_matches_model(cmds in prop::collection::vec(arb_cmd(), 1..40)) {
        run(&cmds);
    }
}
