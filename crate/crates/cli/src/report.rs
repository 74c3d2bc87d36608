use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;
use serde_json::Value;
use sublab::io::write_json;

use crate::config::RunConfig;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub command: String,
    pub config: RunConfig,
    pub results: Value,
    pub provenance: Provenance,
    pub assertions: Vec<Check>,
    pub passed: bool,
}

/// Collects results, assertions and data files of one run.
pub struct Run {
    pub command: String,
    pub config: RunConfig,
    pub out: PathBuf,
    pub results: Value,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    started: Instant,
    started_unix: u64,
}

impl Run {
    pub fn new(command: &str, config: RunConfig, out: PathBuf) -> Self {
        Self {
            command: command.to_string(),
            config,
            out,
            results: Value::Null,
            checks: Vec::new(),
            files: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    /// A solver failure becomes a failed assertion.
    pub fn failure(&mut self, name: impl Into<String>, err: &dyn std::fmt::Display) {
        self.check(name, false, err.to_string());
    }

    pub fn write_csv(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(format!("{}_{name}.csv", self.command));
        sublab::io::write_atomic(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn finish(self) -> Result<(bool, PathBuf)> {
        let passed = self.passed();
        let report = ExperimentReport {
            command: self.command.clone(),
            provenance: Provenance {
                version: env!("CARGO_PKG_VERSION"),
                seed: self.config.seed,
                threads: rayon::current_num_threads(),
                started_unix: self.started_unix,
                wall_time_s: self.started.elapsed().as_secs_f64(),
            },
            config: self.config,
            results: self.results,
            assertions: self.checks,
            passed,
        };
        let path = self.out.join(format!("{}_report.json", self.command));
        write_json(&path, &report)?;
        Ok((passed, path))
    }
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
