#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cdr_core::Clock;
use chrono::{DateTime, Utc};
use tempfile::TempDir;

pub fn start() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-05-01T08:00:00Z").unwrap().with_timezone(&Utc)
}

pub fn bundled_catalog_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/reference_ranges.csv")
}

#[derive(Debug)]
pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// A temporary store driven through `run_with`, one invocation per call.
pub struct CliStore {
    pub dir: TempDir,
    pub clock: Arc<dyn Clock>,
}

impl CliStore {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        CliStore { dir: tempfile::tempdir().unwrap(), clock }
    }

    pub fn path(&self) -> PathBuf {
        self.dir.path().join("store")
    }

    pub fn run(&self, args: &[&str]) -> Run {
        let store = self.path();
        let mut argv = vec!["cdr".to_string(), "--store".into(), store.display().to_string()];
        argv.extend(args.iter().map(|a| a.to_string()));
        run_raw(&argv, self.clock.clone())
    }

    /// Runs and asserts exit 0.
    pub fn ok(&self, args: &[&str]) -> String {
        let run = self.run(args);
        assert_eq!(run.code, 0, "{args:?}: {run:?}");
        run.stdout
    }

    pub fn write(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }
}

pub fn run_raw(argv: &[String], clock: Arc<dyn Clock>) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cdr_cli::run_with(argv, clock, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}
