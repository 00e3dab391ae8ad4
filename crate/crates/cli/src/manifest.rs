//! Verdicts, the run manifest and the plain-text report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.txt";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// Hard checks decide the exit status; advisory ones are only reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Hard,
    Advisory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub severity: Severity,
    /// Headline number of the check (slope, worst violation, ...).
    pub value: Option<f64>,
    pub detail: String,
}

impl Verdict {
    pub fn hard(check: impl Into<String>, passed: bool, value: Option<f64>, detail: String) -> Self {
        Self {
            check: check.into(),
            passed,
            severity: Severity::Hard,
            value,
            detail,
        }
    }

    pub fn advisory(
        check: impl Into<String>,
        passed: bool,
        value: Option<f64>,
        detail: String,
    ) -> Self {
        Self {
            severity: Severity::Advisory,
            ..Self::hard(check, passed, value, detail)
        }
    }

    pub fn is_hard_failure(&self) -> bool {
        !self.passed && self.severity == Severity::Hard
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let tag = match self.severity {
            Severity::Hard => "hard",
            Severity::Advisory => "advisory",
        };
        format!("{status} [{tag}] {}: {}", self.check, self.detail)
    }
}

/// One per-cell CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub label: String,
    pub dim: usize,
    pub n: usize,
    pub theta: f64,
    /// Relative to the manifest directory; absent when the cell was aborted.
    pub csv: Option<String>,
    pub requested: usize,
    pub failures: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub hard_pass: usize,
    pub hard_fail: usize,
    pub advisory_pass: usize,
    pub advisory_fail: usize,
}

impl VerdictSummary {
    pub fn of(verdicts: &[Verdict]) -> Self {
        let mut s = Self::default();
        for v in verdicts {
            match (v.severity, v.passed) {
                (Severity::Hard, true) => s.hard_pass += 1,
                (Severity::Hard, false) => s.hard_fail += 1,
                (Severity::Advisory, true) => s.advisory_pass += 1,
                (Severity::Advisory, false) => s.advisory_fail += 1,
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub kind: Kind,
    pub master_seed: u64,
    pub workers: usize,
    pub config: ExperimentConfig,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub cells: Vec<CellEntry>,
    /// Relative paths of the aggregate CSV and per-kind tables.
    pub aggregate_csv: Option<String>,
    pub tables: Vec<String>,
    pub report: String,
    pub verdicts: Vec<Verdict>,
    pub summary: VerdictSummary,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.summary.hard_fail == 0
    }

    /// Every CSV the manifest points at, relative to `dir`.
    pub fn csv_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.cells
            .iter()
            .filter_map(|c| c.csv.as_ref())
            .chain(self.aggregate_csv.iter())
            .chain(self.tables.iter())
            .map(|p| dir.join(p))
            .collect()
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("{} is not a run manifest: {e}", path.display()))
        })
    }

    /// Writes `dir/manifest.json` through a temporary file and a rename.
    pub fn write_atomic(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let body = serde_json::to_vec_pretty(self)?;
        let mut f = std::fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(&body)
            .and_then(|_| f.sync_all())
            .map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// The verdict report: one line per check, then the tally.
pub fn render_report(kind: Kind, seed: u64, verdicts: &[Verdict]) -> String {
    let mut out = format!("rfac {kind} run, master_seed {seed}\n\n");
    for v in verdicts {
        out.push_str(&v.line());
        out.push('\n');
    }
    let s = VerdictSummary::of(verdicts);
    let _ = write!(
        out,
        "\nhard: {} passed, {} failed; advisory: {} passed, {} failed\n",
        s.hard_pass, s.hard_fail, s.advisory_pass, s.advisory_fail
    );
    out
}
