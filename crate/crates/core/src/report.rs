//! Plain-text run summaries.

use std::fmt::Write as _;

use crate::runner::RunManifest;

/// Summary of occupations, temperatures, stability flags and validity
/// warnings for every scenario.
pub fn emit_report(manifest: &RunManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "nanotrap {} run report", manifest.version);
    let _ = writeln!(s, "config digest: {}", manifest.config_digest);
    let _ = writeln!(s, "seed: {}", manifest.seed);
    if manifest.scenarios.is_empty() {
        let _ = writeln!(s, "\nno scenarios");
    }
    for sc in &manifest.scenarios {
        let _ = writeln!(s, "\n== {} ({}) : {}", sc.name, sc.task.name(), sc.status);
        let _ = writeln!(s, "output: {} ({} rows)", sc.output, sc.rows);
        for line in &sc.summary {
            let _ = writeln!(s, "  {line}");
        }
        for f in &sc.failures {
            match f.value {
                Some(v) => {
                    let _ = writeln!(s, "  point {} ({v:e}) failed: {}", f.index, f.error);
                }
                None => {
                    let _ = writeln!(s, "  failed: {}", f.error);
                }
            }
        }
        if !sc.warnings.is_empty() {
            let _ = writeln!(s, "  warnings:");
            for w in &sc.warnings {
                let _ = writeln!(s, "    {w}");
            }
        }
    }
    s
}
