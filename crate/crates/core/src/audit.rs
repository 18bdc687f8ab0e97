//! Depth audits: how far a model's depth sits above its critical depth.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaling_law::{d_crit, ScalingLawParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    UnderCritical,
    NearOptimal,
    OverDeep,
    Delusive,
}

impl Verdict {
    /// Bands on D/D_crit: `< 1`, `[1, 2)`, `[2, 3)`, `≥ 3`.
    pub fn from_ratio(ratio: f64) -> Self {
        if ratio < 1.0 {
            Verdict::UnderCritical
        } else if ratio < 2.0 {
            Verdict::NearOptimal
        } else if ratio < 3.0 {
            Verdict::OverDeep
        } else {
            Verdict::Delusive
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::UnderCritical => "UnderCritical",
            Verdict::NearOptimal => "NearOptimal",
            Verdict::OverDeep => "OverDeep",
            Verdict::Delusive => "Delusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub depth: u64,
    pub width: u64,
    pub d_crit: f64,
    pub ratio: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub name: String,
    pub depth: u64,
    pub width: u64,
}

/// A built-in model with the critical depth printed alongside it in the literature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedModel {
    pub name: &'static str,
    pub depth: u64,
    pub width: u64,
    pub printed_d_crit: f64,
    pub printed_verdict: Verdict,
}

pub const BUILTIN_ROSTER: [PublishedModel; 5] = [
    PublishedModel { name: "GPT-3", depth: 96, width: 12288, printed_d_crit: 22.9, printed_verdict: Verdict::Delusive },
    PublishedModel { name: "PaLM", depth: 118, width: 18432, printed_d_crit: 23.9, printed_verdict: Verdict::Delusive },
    PublishedModel { name: "Llama-2-70B", depth: 80, width: 8192, printed_d_crit: 21.6, printed_verdict: Verdict::Delusive },
    PublishedModel { name: "Llama-3-70B", depth: 80, width: 8192, printed_d_crit: 21.9, printed_verdict: Verdict::Delusive },
    PublishedModel { name: "Mistral-7B", depth: 32, width: 4096, printed_d_crit: 20.0, printed_verdict: Verdict::NearOptimal },
];

pub fn builtin_shapes() -> Vec<ModelShape> {
    BUILTIN_ROSTER
        .iter()
        .map(|m| ModelShape {
            name: m.name.to_string(),
            depth: m.depth,
            width: m.width,
        })
        .collect()
}

pub fn audit_model(name: &str, depth: u64, width: u64, params: &ScalingLawParams) -> Result<AuditEntry> {
    if depth < 1 {
        return Err(Error::InvalidInput(format!("{name}: depth must be at least 1")));
    }
    if width < 2 {
        return Err(Error::InvalidInput(format!("{name}: width must be at least 2")));
    }
    let dc = d_crit(width, params)?;
    let ratio = depth as f64 / dc;
    Ok(AuditEntry {
        name: name.to_string(),
        depth,
        width,
        d_crit: dc,
        ratio,
        verdict: Verdict::from_ratio(ratio),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Sorted by ratio, deepest first.
    pub entries: Vec<AuditEntry>,
    pub kappa: f64,
    pub notes: Vec<String>,
}

pub const EXTRAPOLATION_CAVEAT: &str = "Critical depths above 7B parameters are extrapolated from small-scale fits and have not been validated by training.";

pub fn audit_report(roster: &[ModelShape], params: &ScalingLawParams) -> Result<AuditReport> {
    if roster.is_empty() {
        return Err(Error::Precondition("audit roster is empty".into()));
    }
    let mut names = BTreeSet::new();
    for m in roster {
        if !names.insert(m.name.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate model name `{}`", m.name)));
        }
    }
    let mut entries = roster
        .iter()
        .map(|m| audit_model(&m.name, m.depth, m.width, params))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.name.cmp(&b.name)));

    let mut notes = vec![EXTRAPOLATION_CAVEAT.to_string()];
    for e in &entries {
        if let Some(m) = BUILTIN_ROSTER.iter().find(|m| m.name == e.name && m.width == e.width) {
            if (m.printed_d_crit - e.d_crit).abs() >= 0.05 {
                notes.push(format!(
                    "{}: printed D_crit {:.1}, computed {:.2} (rounding in the source)",
                    e.name, m.printed_d_crit, e.d_crit
                ));
            }
        }
    }
    if entries.iter().any(|e| e.name == "GPT-3" && e.width == 12288) {
        notes.push(
            "GPT-3: D_crit appears as 22.9, 22.6 and ~23 in the source; κ·ln(12288) = 22.88".into(),
        );
    }
    Ok(AuditReport {
        entries,
        kappa: params.kappa,
        notes,
    })
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let name_w = self.entries.iter().map(|e| e.name.chars().count()).max().unwrap_or(4).max(5);
        let mut out = format!(
            "{:<name_w$}  {:>5}  {:>6}  {:>6}  {:>5}  {}\n",
            "model", "depth", "width", "D_crit", "ratio", "verdict"
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:<name_w$}  {:>5}  {:>6}  {:>6.1}  {:>5.2}  {}\n",
                e.name, e.depth, e.width, e.d_crit, e.ratio, e.verdict
            ));
        }
        out.push_str(&format!("\nκ = {}\n", self.kappa));
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

/// Roster CSV with header `name,depth,width`.
pub fn load_roster_csv(path: &Path) -> Result<Vec<ModelShape>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["name", "depth", "width"] {
        return Err(Error::Row {
            row: 1,
            column: "header".into(),
            message: "expected `name,depth,width`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let int = |i: usize, col: &str| -> Result<u64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Row {
                    row,
                    column: col.into(),
                    message: format!("expected an integer, got `{}`", rec.get(i).unwrap_or("")),
                })
        };
        out.push(ModelShape {
            name: rec.get(0).unwrap_or("").to_string(),
            depth: int(1, "depth")?,
            width: int(2, "width")?,
        });
    }
    Ok(out)
}
