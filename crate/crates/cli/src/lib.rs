//! `cdr` command line.
//!
//! Each invocation opens the store directory, performs one command and exits.
//! The store's lock file keeps the CLI and a running service from writing at
//! the same time. Draft reports are not part of the audited state, so they
//! are carried between invocations in `drafts.json` next to the event log.
//!
//! Exit codes: 0 success (a flagged result is a success), 1 validation or
//! workflow failure, 2 usage error, 3 internal error.

use std::ffi::OsString;
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cdr_api::{Config, ResultSubmission, ServeError};
use cdr_core::results::ReportId;
use cdr_core::{
    Clock, EntryId, EntryStatus, Error, ErrorKind, NewPatient, Report, ReportFormat, Repository, ResultEntry,
    SubmitResult, UidPolicy,
};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

const DRAFTS_FILE: &str = "drafts.json";

#[derive(Debug, Parser)]
#[command(name = "cdr", version, about = "Lab results catalog, entry, review and reporting")]
pub struct Cli {
    /// Store directory (created on first use).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Service configuration file; supplies store_path and uid_pattern.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reference-range catalog.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Patient registry.
    #[command(subcommand)]
    Patient(PatientCmd),
    /// Single result entry.
    #[command(subcommand)]
    Result(ResultCmd),
    /// Batch result entry.
    #[command(subcommand)]
    Results(ResultsCmd),
    /// Supervisor review queue.
    #[command(subcommand)]
    Review(ReviewCmd),
    /// Patient reports.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Run the HTTP service (requires --config).
    Serve,
}

#[derive(Debug, Subcommand)]
pub enum CatalogCmd {
    /// Load a SLNO,Test_Name,Value_Range CSV file.
    Import {
        file: PathBuf,
        #[arg(long, default_value = "admin")]
        by: String,
    },
    /// Record specialist confirmation of a range.
    Verify {
        slno: u32,
        #[arg(long)]
        by: String,
    },
    /// Replace the range text of an entry.
    Edit {
        slno: u32,
        #[arg(long)]
        range: String,
        #[arg(long)]
        by: String,
    },
    List {
        #[arg(long)]
        filter: Option<String>,
    },
    /// Show the range hint for one test.
    Range { slno: u32 },
}

#[derive(Debug, Subcommand)]
pub enum PatientCmd {
    Add(PatientAdd),
    Find { query: String },
}

#[derive(Debug, Args)]
pub struct PatientAdd {
    #[arg(long)]
    pub uid: String,
    #[arg(long)]
    pub name: String,
    /// Date of birth, YYYY-MM-DD.
    #[arg(long)]
    pub dob: NaiveDate,
    /// Stated age in whole years.
    #[arg(long)]
    pub age: u32,
    #[arg(long)]
    pub contact: Option<String>,
    /// Registration date; defaults to today.
    #[arg(long)]
    pub as_of: Option<NaiveDate>,
    #[arg(long)]
    pub by: String,
}

#[derive(Debug, Subcommand)]
pub enum ResultCmd {
    Add {
        #[arg(long)]
        patient: String,
        /// Catalog serial number.
        #[arg(long)]
        test: u32,
        #[arg(long, allow_hyphen_values = true)]
        value: String,
        #[arg(long)]
        unit: Option<String>,
        #[arg(long)]
        by: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ResultsCmd {
    /// One JSON object per line: patient_uid, slno, value, unit, operator_id.
    Ingest {
        file: PathBuf,
        /// Operator for lines that carry no operator_id.
        #[arg(long)]
        by: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReviewCmd {
    List,
    Override {
        entry: String,
        #[arg(long)]
        by: String,
        #[arg(long)]
        reason: String,
    },
    Reject {
        entry: String,
        #[arg(long)]
        by: String,
        #[arg(long)]
        reason: String,
    },
    /// Audit trail of one entry.
    Audit { entry: String },
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    Build {
        #[arg(long)]
        patient: String,
        /// RFC 3339 lower bound on entry time.
        #[arg(long)]
        since: Option<DateTime<Utc>>,
        /// RFC 3339 upper bound on entry time.
        #[arg(long)]
        until: Option<DateTime<Utc>>,
    },
    Sign {
        report: String,
        #[arg(long)]
        by: String,
    },
    Print {
        report: String,
        #[arg(long, default_value = "text")]
        format: String,
    },
}

#[derive(Debug)]
pub enum CliError {
    Domain(Error),
    Usage(String),
    Serve(ServeError),
    Io(io::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Domain(e) => e.code(),
            CliError::Usage(_) => "Usage",
            CliError::Serve(e) => e.code(),
            CliError::Io(_) => "Internal",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(e) => exit_for(e.kind()),
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Serve(ServeError::ConfigInvalid(_)) => EXIT_VALIDATION,
            CliError::Serve(ServeError::Store(e)) => exit_for(e.kind()),
            CliError::Serve(_) | CliError::Io(_) => EXIT_INTERNAL,
        }
    }
}

pub fn exit_for(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Internal => EXIT_INTERNAL,
        _ => EXIT_VALIDATION,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Serve(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Store(e) => CliError::Domain(e),
            other => CliError::Serve(other),
        }
    }
}

type CliResult<T = i32> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run_with<I, T>(args: I, clock: Arc<dyn Clock>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{rendered}");
                EXIT_OK
            };
        }
    };
    match execute(cli, clock, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", e.code());
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, clock: Arc<dyn Clock>, out: &mut dyn Write) -> CliResult {
    if let Command::Serve = cli.command {
        let path = cli
            .config
            .ok_or_else(|| CliError::Usage("serve requires --config <file>".into()))?;
        let config = Config::load(path)?;
        return serve(config);
    }
    let (dir, policy) = resolve_store(cli.store.as_deref(), cli.config.as_deref())?;
    let mut session = Session::open(&dir, policy, clock)?;
    let code = session.dispatch(cli.command, out)?;
    session.save_drafts()?;
    Ok(code)
}

fn serve(config: Config) -> CliResult {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .try_init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(cdr_api::serve(config))?;
    Ok(EXIT_OK)
}

fn resolve_store(store: Option<&Path>, config: Option<&Path>) -> CliResult<(PathBuf, UidPolicy)> {
    match (store, config) {
        (Some(dir), None) => Ok((dir.to_path_buf(), UidPolicy::default())),
        (None, Some(path)) => {
            let config = Config::load(path)?;
            let policy = config.uid_policy()?;
            Ok((config.store_path, policy))
        }
        (Some(_), Some(_)) => Err(CliError::Usage("pass either --store or --config, not both".into())),
        (None, None) => Err(CliError::Usage("--store <dir> or --config <file> is required".into())),
    }
}

fn read_input(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn normal_range(display: &str) -> String {
    if display.is_empty() {
        "no numeric range".to_string()
    } else {
        format!("normal {display}")
    }
}

/// One-line outcome of a submission, e.g. `FLAGGED: AboveUL (normal 3.8-5.6 mEq/L)`.
pub fn outcome_line(entry: &ResultEntry) -> String {
    let state = match entry.status {
        EntryStatus::Flagged => "FLAGGED",
        _ => "ACCEPTED",
    };
    format!(
        "{state}: {} ({})",
        entry.level1.classification,
        normal_range(&entry.level1.range_display)
    )
}

struct Session {
    repo: Repository,
    dir: PathBuf,
    drafts_dirty: bool,
}

impl Session {
    fn open(dir: &Path, policy: UidPolicy, clock: Arc<dyn Clock>) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        let mut repo = Repository::open(dir, clock)?.with_uid_policy(policy);
        let drafts_path = dir.join(DRAFTS_FILE);
        if drafts_path.exists() {
            let text = std::fs::read_to_string(&drafts_path)?;
            let drafts: Vec<Report> = serde_json::from_str(&text)
                .map_err(|e| Error::Storage(format!("{}: {e}", drafts_path.display())))?;
            repo.restore_drafts(drafts);
        }
        Ok(Session { repo, dir: dir.to_path_buf(), drafts_dirty: false })
    }

    fn save_drafts(&self) -> CliResult<()> {
        if !self.drafts_dirty {
            return Ok(());
        }
        let drafts: Vec<&Report> = self.repo.drafts().collect();
        let json = serde_json::to_vec_pretty(&drafts).map_err(|e| Error::Storage(e.to_string()))?;
        let tmp = self.dir.join(format!("{DRAFTS_FILE}.tmp"));
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, self.dir.join(DRAFTS_FILE))?;
        Ok(())
    }

    fn dispatch(&mut self, command: Command, out: &mut dyn Write) -> CliResult {
        match command {
            Command::Catalog(cmd) => self.catalog(cmd, out),
            Command::Patient(cmd) => self.patient(cmd, out),
            Command::Result(ResultCmd::Add { patient, test, value, unit, by }) => {
                let request = SubmitResult { patient_uid: patient, slno: test, value, unit };
                let entry = self.repo.submit_result(request, &by)?;
                writeln!(out, "{}", outcome_line(&entry))?;
                writeln!(out, "entry {} ({})", entry.entry_id, entry.status)?;
                Ok(EXIT_OK)
            }
            Command::Results(ResultsCmd::Ingest { file, by }) => self.ingest(&file, by.as_deref(), out),
            Command::Review(cmd) => self.review(cmd, out),
            Command::Report(cmd) => self.report(cmd, out),
            Command::Serve => unreachable!("handled before the store is opened"),
        }
    }

    fn catalog(&mut self, cmd: CatalogCmd, out: &mut dyn Write) -> CliResult {
        match cmd {
            CatalogCmd::Import { file, by } => {
                let text = read_input(&file)?;
                let report = self.repo.import_catalog(&text, &by)?;
                writeln!(out, "{} loaded, {} errors", report.loaded, report.errors.len())?;
                for row in &report.errors {
                    let slno = row.slno.map(|s| format!(" (SLNO {s})")).unwrap_or_default();
                    writeln!(out, "line {}{slno}: {}: {}", row.line, row.error, row.detail)?;
                }
                Ok(if report.errors.is_empty() { EXIT_OK } else { EXIT_VALIDATION })
            }
            CatalogCmd::Verify { slno, by } => {
                let entry = self.repo.verify_entry(slno, &by)?;
                writeln!(out, "{} {} verified by {by}", entry.slno, entry.test_name)?;
                Ok(EXIT_OK)
            }
            CatalogCmd::Edit { slno, range, by } => {
                let entry = self.repo.edit_range(slno, &range, &by)?;
                let state = if entry.verification.is_verified() { "verified" } else { "unverified" };
                writeln!(out, "{} {} now {:?} ({state})", entry.slno, entry.test_name, entry.range_text)?;
                Ok(EXIT_OK)
            }
            CatalogCmd::List { filter } => {
                let snapshot = self.repo.catalog().current();
                for entry in snapshot.list_tests(filter.as_deref()) {
                    let state = if entry.verification.is_verified() { "verified" } else { "unverified" };
                    writeln!(out, "{:>3}  {:<20}  {:<18}  {state}", entry.slno, entry.test_name, entry.range_text)?;
                }
                Ok(EXIT_OK)
            }
            CatalogCmd::Range { slno } => {
                let entry = self.repo.catalog().current().get(slno)?;
                writeln!(out, "{}: {}", entry.test_name, normal_range(&entry.range_text))?;
                if let Some(note) = &entry.review_note {
                    writeln!(out, "note: {note}")?;
                }
                Ok(EXIT_OK)
            }
        }
    }

    fn patient(&mut self, cmd: PatientCmd, out: &mut dyn Write) -> CliResult {
        match cmd {
            PatientCmd::Add(add) => {
                let request = NewPatient {
                    patient_uid: add.uid,
                    full_name: add.name,
                    dob: add.dob,
                    stated_age_years: add.age,
                    contact: add.contact,
                };
                let patient = self.repo.register_patient(request, add.as_of, &add.by)?;
                writeln!(out, "registered {} {} (age {})", patient.patient_uid, patient.full_name, patient.stated_age_years)?;
                Ok(EXIT_OK)
            }
            PatientCmd::Find { query } => {
                for p in self.repo.find_patient(&query) {
                    writeln!(out, "{}  {}  {}  age {}", p.patient_uid, p.full_name, p.dob, p.stated_age_years)?;
                }
                Ok(EXIT_OK)
            }
        }
    }

    fn ingest(&mut self, file: &Path, default_by: Option<&str>, out: &mut dyn Write) -> CliResult {
        let text = read_input(file)?;
        let (mut accepted, mut flagged, mut failed, mut total) = (0usize, 0usize, 0usize, 0usize);
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            total += 1;
            let n = index + 1;
            match self.ingest_line(line, default_by) {
                Ok(entry) => {
                    if entry.status == EntryStatus::Flagged {
                        flagged += 1;
                    } else {
                        accepted += 1;
                    }
                    writeln!(out, "line {n}: {} {}", entry.entry_id, outcome_line(&entry))?;
                }
                Err(CliError::Domain(e)) if e.kind() != ErrorKind::Internal => {
                    failed += 1;
                    writeln!(out, "line {n}: ERROR {}: {e}", e.code())?;
                }
                Err(CliError::Usage(msg)) => {
                    failed += 1;
                    writeln!(out, "line {n}: ERROR MalformedRequest: {msg}")?;
                }
                Err(other) => return Err(other),
            }
        }
        writeln!(out, "{total} lines: {accepted} accepted, {flagged} flagged, {failed} rejected with error")?;
        Ok(if failed == 0 { EXIT_OK } else { EXIT_VALIDATION })
    }

    fn ingest_line(&mut self, line: &str, default_by: Option<&str>) -> CliResult<ResultEntry> {
        let record: ResultSubmission =
            serde_json::from_str(line).map_err(|e| CliError::Usage(e.to_string()))?;
        let operator = record
            .operator_id
            .as_deref()
            .or(default_by)
            .ok_or(Error::MissingActor)?
            .to_string();
        let request = SubmitResult {
            patient_uid: record.patient_uid,
            slno: record.slno,
            value: record.value,
            unit: record.unit,
        };
        Ok(self.repo.submit_result(request, &operator)?)
    }

    fn review(&mut self, cmd: ReviewCmd, out: &mut dyn Write) -> CliResult {
        match cmd {
            ReviewCmd::List => {
                let queue = self.repo.review_queue();
                if queue.is_empty() {
                    writeln!(out, "review queue is empty")?;
                }
                for entry in queue {
                    let name = self.test_name(entry.slno);
                    writeln!(
                        out,
                        "{}  {}  {}  {} {}  {}  {}  by {}",
                        entry.entry_id,
                        entry.patient_uid,
                        name,
                        entry.value.verbatim,
                        entry.unit,
                        entry.level1.classification,
                        normal_range(&entry.level1.range_display),
                        entry.entered_by
                    )?;
                }
                Ok(EXIT_OK)
            }
            ReviewCmd::Override { entry, by, reason } => {
                let id: EntryId = entry.parse()?;
                let entry = self.repo.apply_override(id, &by, &reason)?;
                writeln!(out, "{} {} by {by}", entry.entry_id, entry.status)?;
                Ok(EXIT_OK)
            }
            ReviewCmd::Reject { entry, by, reason } => {
                let id: EntryId = entry.parse()?;
                let entry = self.repo.reject_entry(id, &by, &reason)?;
                writeln!(out, "{} {} by {by}", entry.entry_id, entry.status)?;
                Ok(EXIT_OK)
            }
            ReviewCmd::Audit { entry } => {
                let id: EntryId = entry.parse()?;
                for event in self.repo.audit_trail(id)? {
                    writeln!(
                        out,
                        "{:>6}  {}  {:<10}  {:?}",
                        event.sequence_no,
                        event.at.to_rfc3339(),
                        event.actor,
                        event.action
                    )?;
                }
                Ok(EXIT_OK)
            }
        }
    }

    fn report(&mut self, cmd: ReportCmd, out: &mut dyn Write) -> CliResult {
        match cmd {
            ReportCmd::Build { patient, since, until } => {
                let report = self.repo.build_report(&patient, since, until)?;
                self.drafts_dirty = true;
                let flagged = report.lines.iter().filter(|l| l.entry_status == EntryStatus::Flagged).count();
                writeln!(
                    out,
                    "{} draft for {}: {} lines, {flagged} awaiting review",
                    report.report_id,
                    report.patient.patient_uid,
                    report.lines.len()
                )?;
                Ok(EXIT_OK)
            }
            ReportCmd::Sign { report, by } => {
                let id: ReportId = report.parse()?;
                let report = self.repo.sign_off(id, &by)?;
                self.drafts_dirty = true;
                writeln!(out, "{} signed off by {by}: {} lines", report.report_id, report.lines.len())?;
                Ok(EXIT_OK)
            }
            ReportCmd::Print { report, format } => {
                let id: ReportId = report.parse()?;
                let format: ReportFormat = format
                    .parse()
                    .map_err(|e: Error| CliError::Usage(e.to_string()))?;
                out.write_all(&self.repo.render_report(id, format)?)?;
                Ok(EXIT_OK)
            }
        }
    }

    fn test_name(&self, slno: u32) -> String {
        self.repo
            .catalog()
            .current()
            .get(slno)
            .map(|e| e.test_name.clone())
            .unwrap_or_else(|_| slno.to_string())
    }
}
