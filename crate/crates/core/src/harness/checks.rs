use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::output::SummaryRow;

/// A pass/fail assertion over the summary of an experiment. Without `cell`,
/// a check must hold in every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Mean PSNR of `better` exceeds that of `worse` by `min_db` or more.
    PsnrGap {
        better: String,
        worse: String,
        min_db: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cell: Option<String>,
    },
    MinPsnr {
        sampler: String,
        min_db: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cell: Option<String>,
    },
    MaxResidual {
        sampler: String,
        max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cell: Option<String>,
    },
    /// No run of the experiment returned an error.
    NoFailures,
}

impl CheckSpec {
    pub fn name(&self) -> String {
        match self {
            Self::PsnrGap { better, worse, min_db, .. } => format!("psnr({better}) - psnr({worse}) >= {min_db} dB"),
            Self::MinPsnr { sampler, min_db, .. } => format!("psnr({sampler}) >= {min_db} dB"),
            Self::MaxResidual { sampler, max, .. } => format!("residual({sampler}) <= {max}"),
            Self::NoFailures => "no failed runs".to_string(),
        }
    }

    /// Sampler labels the check refers to.
    pub fn samplers(&self) -> Vec<&str> {
        match self {
            Self::PsnrGap { better, worse, .. } => vec![better, worse],
            Self::MinPsnr { sampler, .. } | Self::MaxResidual { sampler, .. } => vec![sampler],
            Self::NoFailures => vec![],
        }
    }

    pub(crate) fn validate(&self, samplers: &[String]) -> Result<()> {
        for s in self.samplers() {
            if !samplers.iter().any(|l| l == s) {
                return Err(Error::Config(format!("check {:?} names unknown sampler {s:?}", self.name())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    pub cell: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub const HEADER: &'static [&'static str] = &["check", "cell", "passed", "detail"];
}

fn cells_of<'a>(summary: &'a [SummaryRow], only: Option<&'a str>) -> Vec<&'a str> {
    let mut cells: Vec<&str> = Vec::new();
    for r in summary {
        if only.is_none_or(|c| c == r.cell) && !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
    }
    if cells.is_empty() {
        if let Some(c) = only {
            cells.push(c);
        }
    }
    cells
}

fn find<'a>(summary: &'a [SummaryRow], sampler: &str, cell: &str) -> Option<&'a SummaryRow> {
    summary.iter().find(|r| r.sampler == sampler && r.cell == cell)
}

fn metric(
    summary: &[SummaryRow],
    sampler: &str,
    cell: &str,
    f: fn(&SummaryRow) -> Option<f64>,
) -> std::result::Result<f64, String> {
    let row = find(summary, sampler, cell).ok_or_else(|| format!("no runs of {sampler} in cell {cell}"))?;
    f(row).ok_or_else(|| format!("{sampler} has no successful runs with this metric in cell {cell}"))
}

/// Evaluate `checks` against a summary table. One outcome per check and cell.
pub fn evaluate_checks(checks: &[CheckSpec], summary: &[SummaryRow]) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for check in checks {
        let name = check.name();
        if let CheckSpec::NoFailures = check {
            let failed: usize = summary.iter().map(|r| r.failures).sum();
            out.push(CheckOutcome {
                check: name,
                cell: "*".into(),
                passed: failed == 0,
                detail: format!("{failed} failed runs"),
            });
            continue;
        }
        let only = match check {
            CheckSpec::PsnrGap { cell, .. } | CheckSpec::MinPsnr { cell, .. } | CheckSpec::MaxResidual { cell, .. } => {
                cell.as_deref()
            }
            CheckSpec::NoFailures => None,
        };
        let cells = cells_of(summary, only);
        if cells.is_empty() {
            out.push(CheckOutcome {
                check: name.clone(),
                cell: "*".into(),
                passed: false,
                detail: "no runs to check".into(),
            });
        }
        for cell in cells {
            let verdict: std::result::Result<(bool, String), String> = match check {
                CheckSpec::PsnrGap { better, worse, min_db, .. } => metric(summary, better, cell, |r| r.psnr_mean)
                    .and_then(|b| {
                        let w = metric(summary, worse, cell, |r| r.psnr_mean)?;
                        Ok((b - w >= *min_db, format!("gap {:.3} dB ({b:.3} vs {w:.3})", b - w)))
                    }),
                CheckSpec::MinPsnr { sampler, min_db, .. } => {
                    metric(summary, sampler, cell, |r| r.psnr_mean).map(|p| (p >= *min_db, format!("{p:.3} dB")))
                }
                CheckSpec::MaxResidual { sampler, max, .. } => {
                    metric(summary, sampler, cell, |r| r.residual_mean).map(|v| (v <= *max, format!("{v:.6}")))
                }
                CheckSpec::NoFailures => unreachable!("handled above"),
            };
            let (passed, detail) = verdict.unwrap_or_else(|e| (false, e));
            out.push(CheckOutcome { check: name.clone(), cell: cell.to_string(), passed, detail });
        }
    }
    out
}
