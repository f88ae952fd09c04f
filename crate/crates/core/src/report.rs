//! Run reports: a machine-readable JSON document plus an aligned text table.
//!
//! One [`RunReport`] captures a single plan/expand run end to end: what was
//! solved (formulation, mode, cap), how the search went (status, bound, gap,
//! nodes, wall time), the surrogate-physics candidate the MIP produced, and —
//! when feasibility restoration ran and succeeded — the exact-physics numbers
//! of the restored state. Every figure traces back to a solver or physics
//! result; nothing is synthesized at report time.

use serde::{Deserialize, Serialize};

use crate::physics::FeasibilityReport;

/// Feasibility and accounting numbers for one operating state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    /// Supply cost plus (expansion mode) diameter cost.
    pub cost: f64,
    /// Total emissions `e^T theta`, kT/day.
    pub emissions: f64,
    /// Infinity norm of the mass-balance residual.
    pub mass_residual_inf: f64,
    /// Infinity norm of the pressure-flow coupling residual.
    pub weymouth_residual_inf: f64,
    /// Worst violation of any variable box.
    pub bound_violation_inf: f64,
}

impl From<&FeasibilityReport> for StateSummary {
    fn from(r: &FeasibilityReport) -> Self {
        StateSummary {
            cost: r.cost_total,
            emissions: r.emission_total,
            mass_residual_inf: r.mass_residual_inf,
            weymouth_residual_inf: r.weymouth_residual_inf,
            bound_violation_inf: r.bound_violation_inf,
        }
    }
}

/// Diameter account for expansion-mode runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSummary {
    /// Mean of the signed per-pipe diameter deltas against the network's
    /// nominal diameters, mm.
    pub mean_diameter_change: f64,
    /// Largest-magnitude per-pipe delta (signed), mm.
    pub max_diameter_change: f64,
    /// Diameter cost component `lambda^T d` at the chosen diameters.
    pub expansion_cost: f64,
}

/// Everything one plan/expand run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// "icnn" (envelope indicator model) or "miqp" (tangent-cut relaxation).
    pub formulation: String,
    /// "operational" or "expansion".
    pub mode: String,
    /// Emission cap in kT/day; `None` means uncapped.
    pub emission_cap: Option<f64>,
    /// Terminal solver status: optimal | infeasible | node_limit | time_limit.
    pub status: String,
    /// Incumbent objective of the MIP.
    pub mip_objective: f64,
    /// Best proven lower bound.
    pub best_bound: f64,
    /// Relative optimality gap at termination.
    pub gap: f64,
    /// Branch-and-bound nodes processed.
    pub nodes: usize,
    /// Wall-clock seconds spent in the solver.
    pub solve_seconds: f64,
    /// The candidate state exactly as decoded from the MIP assignment,
    /// scored under exact physics (its coupling residual shows the surrogate
    /// gap).
    pub candidate: StateSummary,
    /// Restored exact-physics state; present only when restoration ran and
    /// produced a feasible point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored: Option<StateSummary>,
    /// Present only for expansion runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<ExpansionSummary>,
    /// Free-form flags (for example dominance exceptions found by
    /// comparisons); never numeric content.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn fmt_cap(cap: Option<f64>) -> String {
    match cap {
        None => "inf".to_string(),
        Some(c) => trim_num(c, 3),
    }
}

/// Fixed-precision float with trailing zeros trimmed ("12.500" -> "12.5",
/// "13.000" -> "13").
fn trim_num(v: f64, prec: usize) -> String {
    let v = if v == 0.0 { 0.0 } else { v }; // collapse -0.0
    let s = format!("{v:.prec$}");
    if !s.contains('.') {
        return s;
    }
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

/// Render reports as one aligned text table, one row per run.
///
/// Columns mirror the usual cost-summary layout: the setting (cap,
/// formulation), the solver view (status, objective, bound, gap, nodes,
/// time), then the physics view (restored cost, emissions, worst coupling
/// residual). Expansion columns appear when any report carries an expansion
/// summary. Restored figures are "-" when restoration did not succeed.
pub fn render_table(reports: &[RunReport]) -> String {
    let with_expansion = reports.iter().any(|r| r.expansion.is_some());
    let mut header: Vec<String> = [
        "cap", "form", "status", "mip_obj", "bound", "gap", "nodes", "sec", "restored",
        "emissions", "wey_resid",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if with_expansion {
        header.extend(["d_mean", "d_max", "exp_cost"].iter().map(|s| s.to_string()));
    }

    let mut rows: Vec<Vec<String>> = vec![header];
    for r in reports {
        let (restored, emissions, resid) = match &r.restored {
            Some(s) => (
                trim_num(s.cost, 4),
                trim_num(s.emissions, 4),
                format!("{:.2e}", s.weymouth_residual_inf),
            ),
            None => (
                "-".to_string(),
                trim_num(r.candidate.emissions, 4),
                format!("{:.2e}", r.candidate.weymouth_residual_inf),
            ),
        };
        let mut row = vec![
            fmt_cap(r.emission_cap),
            r.formulation.clone(),
            r.status.clone(),
            trim_num(r.mip_objective, 4),
            trim_num(r.best_bound, 4),
            format!("{:.2e}", r.gap),
            r.nodes.to_string(),
            format!("{:.2}", r.solve_seconds),
            restored,
            emissions,
            resid,
        ];
        if with_expansion {
            match &r.expansion {
                Some(e) => row.extend([
                    trim_num(e.mean_diameter_change, 2),
                    trim_num(e.max_diameter_change, 2),
                    trim_num(e.expansion_cost, 4),
                ]),
                None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            }
        }
        rows.push(row);
    }

    let cols = rows[0].len();
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> =
            row.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
