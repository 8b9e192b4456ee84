//! Check reports: every verifier returns the same shape — a verdict, the
//! worst margin it saw, where it saw it, and how hard it looked.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn is_fail(self) -> bool {
        self == Verdict::Fail
    }
}

/// Outcome of a single verification.
///
/// Margins are oriented so that "more positive is safer": a check fails
/// exactly when `worst_margin < -tolerance`. `witness` holds the point(s)
/// where the worst margin occurred and is always present on failure.
/// `samples` counts the configurations actually examined, so a pass can be
/// weighed by how much evidence backs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub verdict: Verdict,
    pub worst_margin: f64,
    pub witness: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub samples: u64,
    pub notes: Vec<String>,
}

impl CheckReport {
    /// Builds a pass/fail report, deriving the verdict from the margin so the
    /// `fail <=> margin < -tol` invariant holds by construction.
    pub fn from_margin(
        worst_margin: f64,
        tolerance: f64,
        witness: Vec<Vec<f64>>,
        samples: u64,
    ) -> Self {
        let verdict = if worst_margin < -tolerance {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        CheckReport {
            verdict,
            worst_margin,
            witness,
            tolerance,
            samples,
            notes: Vec::new(),
        }
    }

    /// A check that could not reach a conclusion (degenerate input, failed
    /// precondition). Never counts as a failure.
    pub fn inconclusive(reason: impl Into<String>, tolerance: f64, samples: u64) -> Self {
        CheckReport {
            verdict: Verdict::Inconclusive,
            worst_margin: f64::NAN,
            witness: Vec::new(),
            tolerance,
            samples,
            notes: vec![reason.into()],
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fail_iff_margin_below_neg_tol() {
        assert_eq!(
            CheckReport::from_margin(-1e-7, 1e-6, vec![], 1).verdict,
            Verdict::Pass
        );
        assert_eq!(
            CheckReport::from_margin(-2e-6, 1e-6, vec![], 1).verdict,
            Verdict::Fail
        );
        // boundary: margin == -tol is still a pass
        assert_eq!(
            CheckReport::from_margin(-1e-6, 1e-6, vec![], 1).verdict,
            Verdict::Pass
        );
    }

    #[test]
    fn inconclusive_is_not_a_failure() {
        let r = CheckReport::inconclusive("degenerate", 1e-6, 0);
        assert!(!r.verdict.is_fail());
        assert!(!r.passed());
    }
}
