//! Markdown summary of one or more run manifests.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};

use crate::manifest::RunManifest;

/// The statement a check provides numerical evidence for.
pub fn statement_for(check: &str) -> &'static str {
    match check {
        "splitting-identity" => "Green function splitting G = W_m + V_m",
        "l2-moment-slope" | "exp-moment-slope" | "exp-moment-mc" | "exp-moment-diff-trend"
        | "exp-moment-diff-bounded" => {
            "moment bounds for the smooth Gaussian field"
        }
        c if c.starts_with("even-power") || c == "complex-taylor" => {
            "exponential integral inequalities for mean-zero functions"
        }
        c if c.starts_with("sine-gordon") => "Sine-Gordon representation of the smooth partition function",
        "regular-partition-bounded" => "boundedness of the smooth-part partition function",
        "yukawa-partition-decay" => "screened-part partition function close to 1",
        "jensen-lower-bound" => "partition function lower bound (Jensen)",
        "expansion-identity" | "taylor-step" | "remainder-decay" => "decay of the product remainder",
        c if c.starts_with("rate") => "decorrelation rate of correlation functions",
        _ => "plumbing",
    }
}

/// Merges the verdict blocks of all manifests into one table.
pub fn render(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        bail!("manifest-missing: no manifests given");
    }
    let manifests = paths
        .iter()
        .map(|p| RunManifest::read(p))
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::new();
    let _ = writeln!(out, "# vortexgas run summary\n");
    let _ = writeln!(out, "| experiment | check | statement | instances | violations | worst margin | result |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    let mut failed = Vec::new();
    for m in &manifests {
        for v in &m.verdicts {
            let result = if v.passed { "pass" } else { "**FAIL**" };
            if !v.passed {
                failed.push(format!("{}/{}", m.experiment, v.check));
            }
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {:e} | {} |",
                m.experiment,
                v.check,
                statement_for(&v.check),
                v.instances,
                v.violations,
                v.worst_margin,
                result
            );
        }
    }
    let _ = writeln!(out);
    if failed.is_empty() {
        let _ = writeln!(out, "All checks passed.");
    } else {
        let _ = writeln!(out, "Failed checks: {}", failed.join(", "));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{RunStatus, Verdict};

    fn write(dir: &std::path::Path, name: &str, verdicts: Vec<Verdict>) -> PathBuf {
        let m = RunManifest {
            tool_version: "t".into(),
            experiment: name.into(),
            config: Default::default(),
            started_unix: 0,
            finished_unix: 0,
            status: RunStatus::Pass,
            verdicts,
            outputs: vec![],
        };
        let p = dir.join(format!("{name}.json"));
        m.write_atomic(&p).unwrap();
        p
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(render(&[]).unwrap_err().to_string().contains("manifest-missing"));
        assert!(render(&[PathBuf::from("/nonexistent/m.json")]).is_err());
    }

    #[test]
    fn flags_failed_checks() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "kernels", vec![Verdict::from_margin("splitting-identity", 1e-11, String::new())]);
        let only = render(std::slice::from_ref(&a)).unwrap();
        assert!(only.contains("All checks passed") && !only.contains("FAIL"));
        let b = write(dir.path(), "remainder", vec![Verdict::from_margin("remainder-decay", -0.1, String::new())]);
        let mixed = render(&[a, b]).unwrap();
        assert!(mixed.contains("Failed checks: remainder/remainder-decay"));
        assert!(mixed.contains("decay of the product remainder"));
    }
}
