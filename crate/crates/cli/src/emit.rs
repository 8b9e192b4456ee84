//! Report emission: pretty JSON, flat CSV, or a human-readable summary.
//!
//! JSON and CSV are byte-for-byte deterministic for a given scenario and
//! toolkit version except for each check's `millis` field.

use crate::error::{CliError, Result};
use crate::runner::RunReport;
use prekopa_core::Verdict;

pub fn to_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn to_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label",
        "kind",
        "verdict",
        "margin",
        "tolerance",
        "samples",
        "millis",
        "witness",
        "notes",
    ])
    .map_err(|e| CliError::Other(format!("csv: {e}")))?;
    for c in &report.checks {
        let witness =
            serde_json::to_string(&c.witness).expect("witness serializes");
        w.write_record([
            c.label.as_str(),
            c.kind.as_str(),
            verdict_str(c.verdict),
            &format_margin(c.margin),
            &format!("{:e}", c.tolerance),
            &c.samples.to_string(),
            &c.millis.to_string(),
            &witness,
            &c.notes.join(" | "),
        ])
        .map_err(|e| CliError::Other(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Other(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Other(format!("csv: {e}")))
}

pub fn to_summary(report: &RunReport) -> String {
    let mut out = String::new();
    let title = report.title.as_deref().unwrap_or("(untitled)");
    out.push_str(&format!(
        "scenario {} — {}\n",
        &report.scenario_digest[..12.min(report.scenario_digest.len())],
        title
    ));
    let width = report
        .checks
        .iter()
        .map(|c| c.label.len())
        .max()
        .unwrap_or(0);
    for c in &report.checks {
        out.push_str(&format!(
            "{:4}  {:width$}  {:26} margin {:>13}  tol {:>9}  {:>8} samples  {} ms\n",
            verdict_str(c.verdict).to_uppercase(),
            c.label,
            c.kind,
            format_margin(c.margin),
            format!("{:.0e}", c.tolerance),
            c.samples,
            c.millis,
            width = width,
        ));
        if c.verdict != Verdict::Pass {
            if !c.witness.is_empty() {
                out.push_str(&format!("      witness: {:?}\n", c.witness));
            }
            for note in &c.notes {
                out.push_str(&format!("      note: {note}\n"));
            }
        }
    }
    let (pass, fail, inconclusive) = report.checks.iter().fold((0, 0, 0), |acc, c| {
        match c.verdict {
            Verdict::Pass => (acc.0 + 1, acc.1, acc.2),
            Verdict::Fail => (acc.0, acc.1 + 1, acc.2),
            Verdict::Inconclusive => (acc.0, acc.1, acc.2 + 1),
        }
    });
    out.push_str(&format!(
        "overall: {} ({pass} passed, {fail} failed, {inconclusive} inconclusive)\n",
        verdict_str(report.overall).to_uppercase()
    ));
    out
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn format_margin(m: f64) -> String {
    if m.is_nan() {
        "n/a".into()
    } else {
        format!("{m:.6e}")
    }
}
