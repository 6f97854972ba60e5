//! Per-check verdicts and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vortexgas_core::expansion::CheckVerdict;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub instances: usize,
    pub violations: usize,
    /// Distance from the pass threshold; negative when failed.
    pub worst_margin: f64,
    #[serde(default)]
    pub detail: String,
}

impl Verdict {
    /// A single-instance check that passes iff `margin >= 0`.
    pub fn from_margin(check: &str, margin: f64, detail: String) -> Self {
        let passed = margin >= 0.0;
        Self {
            check: check.to_string(),
            passed,
            instances: 1,
            violations: usize::from(!passed),
            worst_margin: margin,
            detail,
        }
    }

    /// Many instances, each passing iff its margin is nonnegative.
    pub fn from_margins(check: &str, margins: &[f64], detail: String) -> Self {
        let violations = margins.iter().filter(|m| !(**m >= 0.0)).count();
        Self {
            check: check.to_string(),
            passed: violations == 0 && !margins.is_empty(),
            instances: margins.len(),
            violations,
            worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
            detail,
        }
    }
}

impl From<&CheckVerdict> for Verdict {
    fn from(v: &CheckVerdict) -> Self {
        Self {
            check: v.check.clone(),
            passed: v.passed(),
            instances: v.instances,
            violations: v.violations,
            worst_margin: v.worst_margin,
            detail: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Pass,
    ContractViolation,
    NoiseDominated,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Pass => 0,
            Self::ContractViolation | Self::NoiseDominated => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub experiment: String,
    /// Every parameter the run read, defaults included.
    pub config: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub status: RunStatus,
    pub verdicts: Vec<Verdict>,
    pub outputs: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn tool_version() -> String {
    format!("vortexgas {}", env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    /// Writes pretty JSON to a temporary file in the same directory and
    /// renames it into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|s| s.to_str()).unwrap_or("manifest")
        ));
        {
            let mut f = fs::File::create(&tmp)
                .with_context(|| format!("creating {}", tmp.display()))?;
            serde_json::to_writer_pretty(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("manifest-missing: cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
