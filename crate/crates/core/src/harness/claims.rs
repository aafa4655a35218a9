//! Checks reported gains against expected values.
//!
//! A claim file is TOML:
//!
//! ```toml
//! [[claims]]
//! name = "gd_pragmatic_scg_miou"
//! backend_id = "gd"
//! prompt_type = "pragmatic_ambiguity"
//! baseline = "raw"
//! method = "semantic_category_grounding"
//! metric = "miou"
//! expected_pp = 55.15
//! tolerance_pp = 0.01
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::RunReport;
use crate::error::{Error, Result};
use crate::metrics::{format_signed_pp, improvement, ConditionKey};
use crate::vlm::{DetailLevel, EnhancementMethod};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimMetric {
    Miou,
    Confidence,
}

fn default_baseline() -> EnhancementMethod {
    EnhancementMethod::Raw
}

fn default_tolerance() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Claim {
    pub name: String,
    pub backend_id: String,
    pub prompt_type: DetailLevel,
    #[serde(default = "default_baseline")]
    pub baseline: EnhancementMethod,
    pub method: EnhancementMethod,
    pub metric: ClaimMetric,
    pub expected_pp: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance_pp: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimFile {
    #[serde(default)]
    pub claims: Vec<Claim>,
}

impl ClaimFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read claims {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid claim file: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Pass { observed: f64, residual: f64 },
    Fail { observed: f64, residual: f64 },
    CellAbsent(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClaimOutcome {
    pub claim: Claim,
    pub verdict: Verdict,
}

impl ClaimOutcome {
    pub fn passed(&self) -> bool {
        matches!(self.verdict, Verdict::Pass { .. })
    }
}

impl fmt::Display for ClaimOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.claim;
        match &self.verdict {
            Verdict::Pass { observed, residual } | Verdict::Fail { observed, residual } => write!(
                f,
                "{} {}: expected {} pp, observed {} pp, residual {} pp (tolerance {})",
                if self.passed() { "PASS" } else { "FAIL" },
                c.name,
                format_signed_pp(c.expected_pp),
                format_signed_pp(*observed),
                format_signed_pp(*residual),
                c.tolerance_pp
            ),
            Verdict::CellAbsent(detail) => write!(f, "FAIL {}: cell absent ({detail})", c.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckSummary {
    pub outcomes: Vec<ClaimOutcome>,
}

impl CheckSummary {
    /// True when every claim passes; an empty claim set passes vacuously.
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(ClaimOutcome::passed)
    }

    pub fn render(&self) -> String {
        let mut out: String = self.outcomes.iter().map(|o| format!("{o}\n")).collect();
        if self.outcomes.is_empty() {
            out.push_str("no claims\n");
        }
        out
    }
}

fn evaluate(report: &RunReport, claim: &Claim) -> Verdict {
    let base_key = ConditionKey::new(claim.prompt_type, claim.baseline, claim.backend_id.clone());
    let key = ConditionKey::new(claim.prompt_type, claim.method, claim.backend_id.clone());
    let lookup = |k: &ConditionKey| match report.cell(k) {
        None => Err(format!("{k}")),
        Some(cell) => cell.result().ok_or_else(|| format!("{k} is a gap")),
    };
    let (a, b) = match (lookup(&base_key), lookup(&key)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Verdict::CellAbsent(e),
    };
    let d = match improvement(a, b) {
        Ok(d) => d,
        Err(e) => return Verdict::CellAbsent(e.to_string()),
    };
    let observed = match claim.metric {
        ClaimMetric::Miou => d.delta_miou_pp,
        ClaimMetric::Confidence => d.delta_conf_pp,
    };
    let residual = observed - claim.expected_pp;
    if residual.abs() <= claim.tolerance_pp {
        Verdict::Pass { observed, residual }
    } else {
        Verdict::Fail { observed, residual }
    }
}

pub fn consistency_check(report: &RunReport, claims: &ClaimFile) -> CheckSummary {
    CheckSummary {
        outcomes: claims
            .claims
            .iter()
            .map(|c| ClaimOutcome {
                claim: c.clone(),
                verdict: evaluate(report, c),
            })
            .collect(),
    }
}
