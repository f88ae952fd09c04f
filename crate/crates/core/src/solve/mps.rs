//! Deterministic MPS export and strict solution import.
//!
//! Models are written in the classic fixed-field MPS layout (one coefficient
//! per line, wide numeric fields, binaries bracketed by INTORG/INTEND
//! markers) with mangled `C0000001`/`R0000001` names, so any MPS-speaking
//! solver can consume them. A JSON sidecar maps the mangled names back to the
//! model's own row and column names. Export is byte-deterministic: the same
//! model always produces the same text. Imported solutions are checked
//! strictly — every variable must be assigned exactly once, and the
//! assignment is re-verified against rows, bounds, and integrality before it
//! is accepted.

use super::SolveError;
use crate::compile::{MipModel, Sense, VarKind};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// MPS text plus the JSON sidecar mapping mangled names to model names.
#[derive(Debug, Clone, PartialEq)]
pub struct MpsExport {
    pub mps: String,
    pub mapping: String,
}

fn column_name(j: usize) -> String {
    format!("C{:07}", j + 1)
}

fn row_name(r: usize) -> String {
    format!("R{:07}", r + 1)
}

/// Fixed-width scientific notation with eight fractional digits; stable for
/// any finite double, so formatting never depends on locale or shortest-form
/// heuristics.
fn fmt_number(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000E+00".to_string();
    }
    let neg = v < 0.0;
    let a = v.abs();
    let mut e = a.log10().floor() as i32;
    let mut mantissa = format!("{:.8}", a / 10f64.powi(e));
    if mantissa.starts_with("10") {
        e += 1;
        mantissa = format!("{:.8}", a / 10f64.powi(e));
    }
    format!("{}{}E{}{:02}", if neg { "-" } else { "" }, mantissa, if e < 0 { "-" } else { "+" }, e.abs())
}

/// Serialize `model` as MPS with a name-mapping sidecar.
pub fn export_mps(model: &MipModel, name: &str) -> MpsExport {
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {name}");
    let _ = writeln!(out, "ROWS");
    let _ = writeln!(out, " N  OBJ");
    for (r, row) in model.rows.iter().enumerate() {
        let tag = match row.sense {
            Sense::Le => "L",
            Sense::Ge => "G",
            Sense::Eq => "E",
        };
        let _ = writeln!(out, " {:<2} {}", tag, row_name(r));
    }

    // Per-column entries: objective first, then rows in model order.
    let mut entries: Vec<Vec<(String, f64)>> = vec![Vec::new(); model.num_vars()];
    for (j, &c) in model.objective.iter().enumerate() {
        if c != 0.0 {
            entries[j].push(("OBJ".to_string(), c));
        }
    }
    for (r, row) in model.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            if a != 0.0 {
                entries[j].push((row_name(r), a));
            }
        }
    }

    let _ = writeln!(out, "COLUMNS");
    let mut in_integer = false;
    let mut marker_counter = 0usize;
    for (j, var) in model.vars.iter().enumerate() {
        let want_integer = var.kind == VarKind::Binary;
        if want_integer != in_integer {
            marker_counter += 1;
            let tag = if want_integer { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(out, "    {:<8}  {:<8}  {}", format!("M{marker_counter:07}"), "'MARKER'", tag);
            in_integer = want_integer;
        }
        let cname = column_name(j);
        if entries[j].is_empty() {
            // Declare otherwise-unreferenced columns so importers keep them.
            let _ = writeln!(out, "    {:<8}  {:<8}  {}", cname, "OBJ", fmt_number(0.0));
        }
        for (rname, v) in &entries[j] {
            let _ = writeln!(out, "    {:<8}  {:<8}  {}", cname, rname, fmt_number(*v));
        }
    }
    if in_integer {
        marker_counter += 1;
        let _ = writeln!(
            out,
            "    {:<8}  {:<8}  {}",
            format!("M{marker_counter:07}"),
            "'MARKER'",
            "'INTEND'"
        );
    }

    let _ = writeln!(out, "RHS");
    for (r, row) in model.rows.iter().enumerate() {
        if row.rhs != 0.0 {
            let _ = writeln!(out, "    {:<8}  {:<8}  {}", "RHS", row_name(r), fmt_number(row.rhs));
        }
    }
    let _ = writeln!(out, "RANGES");
    let _ = writeln!(out, "BOUNDS");
    for (j, var) in model.vars.iter().enumerate() {
        let cname = column_name(j);
        if var.kind == VarKind::Binary {
            let _ = writeln!(out, " {:<2} {:<8}  {}", "BV", "BND", cname);
            continue;
        }
        let lo_inf = var.lower == f64::NEG_INFINITY;
        let hi_inf = var.upper == f64::INFINITY;
        if lo_inf && hi_inf {
            let _ = writeln!(out, " {:<2} {:<8}  {}", "FR", "BND", cname);
            continue;
        }
        if lo_inf {
            let _ = writeln!(out, " {:<2} {:<8}  {}", "MI", "BND", cname);
        } else if var.lower != 0.0 {
            let _ = writeln!(out, " {:<2} {:<8}  {}  {}", "LO", "BND", cname, fmt_number(var.lower));
        }
        if !hi_inf {
            let _ = writeln!(out, " {:<2} {:<8}  {}  {}", "UP", "BND", cname, fmt_number(var.upper));
        }
    }
    let _ = writeln!(out, "ENDATA");

    // Sidecar: mangled name -> model name (columns also carry kind/symbol).
    let mut rows_map = BTreeMap::new();
    for (r, row) in model.rows.iter().enumerate() {
        rows_map.insert(row_name(r), row.name.clone());
    }
    let mut cols_map = BTreeMap::new();
    for (j, var) in model.vars.iter().enumerate() {
        let mut entry = BTreeMap::new();
        entry.insert("name".to_string(), serde_json::Value::String(var.name.clone()));
        entry.insert(
            "kind".to_string(),
            serde_json::Value::String(
                match var.kind {
                    VarKind::Binary => "binary",
                    VarKind::Continuous => "continuous",
                }
                .to_string(),
            ),
        );
        if let Some(sym) = &var.symbol {
            entry.insert("symbol".to_string(), serde_json::Value::String(format!("{sym:?}")));
        }
        cols_map.insert(column_name(j), entry);
    }
    let mapping = serde_json::json!({
        "objective": "OBJ",
        "rows": rows_map,
        "columns": cols_map,
    });
    MpsExport {
        mps: out,
        mapping: serde_json::to_string_pretty(&mapping).expect("mapping serializes"),
    }
}

/// Parse a `<variable> <value>` solution listing (either mangled or model
/// names; `#` starts a comment) and re-verify it against `model` before
/// returning the assignment in model variable order.
pub fn import_solution(model: &MipModel, text: &str) -> Result<Vec<f64>, SolveError> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mangled: Vec<String> = (0..model.num_vars()).map(column_name).collect();
    for (j, var) in model.vars.iter().enumerate() {
        index.insert(var.name.as_str(), j);
        index.insert(mangled[j].as_str(), j);
    }

    let mut values: Vec<Option<f64>> = vec![None; model.num_vars()];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (name, value) = match (parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(v), None) => (n, v),
            _ => {
                return Err(SolveError::Import(format!(
                    "line {}: expected '<variable> <value>', got {line:?}",
                    lineno + 1
                )))
            }
        };
        let j = *index.get(name).ok_or_else(|| {
            SolveError::Import(format!("line {}: unknown variable {name:?}", lineno + 1))
        })?;
        let v: f64 = value.parse().map_err(|_| {
            SolveError::Import(format!("line {}: unparsable value {value:?}", lineno + 1))
        })?;
        if values[j].is_some() {
            return Err(SolveError::Import(format!(
                "line {}: variable {name:?} assigned twice",
                lineno + 1
            )));
        }
        values[j] = Some(v);
    }

    let mut x = Vec::with_capacity(model.num_vars());
    for (j, v) in values.into_iter().enumerate() {
        match v {
            Some(v) => x.push(v),
            None => {
                return Err(SolveError::Import(format!(
                    "variable {:?} ({}) missing from the solution",
                    model.vars[j].name, mangled[j]
                )))
            }
        }
    }
    verify_assignment(model, &x)?;
    Ok(x)
}

/// Feasibility re-verification shared by the import path: rows, bounds, and
/// binary integrality, all at 1e-6 (scaled by magnitude).
pub fn verify_assignment(model: &MipModel, x: &[f64]) -> Result<(), SolveError> {
    let tol = |scale: f64| 1e-6 * scale.abs().max(1.0);
    for (j, var) in model.vars.iter().enumerate() {
        if x[j] < var.lower - tol(var.lower) || x[j] > var.upper + tol(var.upper) {
            return Err(SolveError::ImportInfeasible {
                what: format!("bounds of {:?}", var.name),
                residual: (x[j] - x[j].clamp(var.lower, var.upper)).abs(),
            });
        }
        if var.kind == VarKind::Binary {
            let r = (x[j] - x[j].round()).abs();
            if r > 1e-6 || !(x[j].round() == 0.0 || x[j].round() == 1.0) {
                return Err(SolveError::ImportInfeasible {
                    what: format!("integrality of {:?}", var.name),
                    residual: r,
                });
            }
        }
    }
    for row in &model.rows {
        let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        let t = tol(lhs.abs().max(row.rhs.abs()));
        let violation = match row.sense {
            Sense::Le => (lhs - row.rhs).max(0.0),
            Sense::Ge => (row.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - row.rhs).abs(),
        };
        if violation > t {
            return Err(SolveError::ImportInfeasible {
                what: format!("row {:?}", row.name),
                residual: violation,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::{MipRow, MipVar, Symbol};
    use crate::solve::{solve_mip, MipConfig, MipStatus};

    fn sample_model() -> MipModel {
        MipModel {
            vars: vec![
                MipVar {
                    name: "pick".to_string(),
                    lower: 0.0,
                    upper: 1.0,
                    kind: VarKind::Binary,
                    symbol: Some(Symbol::FlowDirection(0)),
                },
                MipVar {
                    name: "level".to_string(),
                    lower: -2.5,
                    upper: 7.0,
                    kind: VarKind::Continuous,
                    symbol: None,
                },
                MipVar {
                    name: "free_term".to_string(),
                    lower: f64::NEG_INFINITY,
                    upper: f64::INFINITY,
                    kind: VarKind::Continuous,
                    symbol: None,
                },
            ],
            rows: vec![
                MipRow {
                    name: "cap".to_string(),
                    coeffs: vec![(0, 3.0), (1, 1.0)],
                    sense: Sense::Le,
                    rhs: 5.0,
                },
                MipRow {
                    name: "tie".to_string(),
                    coeffs: vec![(1, 1.0), (2, -1.0)],
                    sense: Sense::Eq,
                    rhs: 0.0,
                },
            ],
            objective: vec![-4.0, 1.0, 0.0],
        }
    }

    #[test]
    fn export_structure_is_fixed_and_markers_pair_once() {
        let ex = export_mps(&sample_model(), "SAMPLE");
        let text = &ex.mps;
        assert!(text.starts_with("NAME          SAMPLE\n"));
        for section in ["ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"] {
            assert!(text.lines().any(|l| l == section), "missing section {section}");
        }
        assert_eq!(text.matches("'INTORG'").count(), 1);
        assert_eq!(text.matches("'INTEND'").count(), 1);
        assert!(text.contains(" BV BND       C0000001"));
        assert!(text.contains(" LO BND       C0000002  -2.50000000E+00"));
        assert!(text.contains(" UP BND       C0000002  7.00000000E+00"));
        assert!(text.contains(" FR BND       C0000003"));
        // The sidecar carries original names and symbols.
        let mapping: serde_json::Value = serde_json::from_str(&ex.mapping).unwrap();
        assert_eq!(mapping["rows"]["R0000001"], "cap");
        assert_eq!(mapping["columns"]["C0000001"]["name"], "pick");
        assert_eq!(mapping["columns"]["C0000001"]["symbol"], "FlowDirection(0)");
    }

    #[test]
    fn export_is_byte_deterministic() {
        let a = export_mps(&sample_model(), "SAMPLE");
        let b = export_mps(&sample_model(), "SAMPLE");
        assert_eq!(a.mps, b.mps);
        assert_eq!(a.mapping, b.mapping);
    }

    #[test]
    fn number_format_is_stable() {
        assert_eq!(fmt_number(0.0), "0.00000000E+00");
        assert_eq!(fmt_number(-0.0), "0.00000000E+00");
        assert_eq!(fmt_number(1.0), "1.00000000E+00");
        assert_eq!(fmt_number(1000.0), "1.00000000E+03");
        assert_eq!(fmt_number(-0.65), "-6.50000000E-01");
        assert_eq!(fmt_number(9.999999999e5), "1.00000000E+06");
        // Parse -> format round-trips the printed digits.
        let printed = fmt_number(0.123456785);
        let reparsed: f64 = printed.parse().unwrap();
        assert_eq!(fmt_number(reparsed), printed);
    }

    #[test]
    fn import_round_trips_a_solved_model() {
        let m = sample_model();
        let sol = solve_mip(&m, &MipConfig::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        let x = sol.assignment.unwrap();
        let mut listing = String::from("# solver output\n");
        for (j, v) in x.iter().enumerate() {
            listing.push_str(&format!("{} {v:.12}\n", m.vars[j].name));
        }
        let imported = import_solution(&m, &listing).unwrap();
        for (a, b) in imported.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-9);
        }
        // Mangled names work too.
        let mut mangled = String::new();
        for (j, v) in x.iter().enumerate() {
            mangled.push_str(&format!("C{:07} {v:.12}\n", j + 1));
        }
        assert!(import_solution(&m, &mangled).is_ok());
    }

    #[test]
    fn import_rejects_misspelled_missing_and_duplicate_names() {
        let m = sample_model();
        let err = import_solution(&m, "pikc 1\nlevel 0\nfree_term 0\n").unwrap_err();
        assert!(matches!(err, SolveError::Import(ref s) if s.contains("pikc")));
        let err = import_solution(&m, "pick 1\nlevel 0\n").unwrap_err();
        assert!(matches!(err, SolveError::Import(ref s) if s.contains("free_term")));
        let err = import_solution(&m, "pick 1\npick 0\nlevel 0\nfree_term 0\n").unwrap_err();
        assert!(matches!(err, SolveError::Import(ref s) if s.contains("twice")));
    }

    #[test]
    fn import_reverifies_feasibility() {
        let m = sample_model();
        // cap row: 3*pick + level <= 5 -> violated.
        let err = import_solution(&m, "pick 1\nlevel 4.0\nfree_term 4.0\n").unwrap_err();
        assert!(matches!(err, SolveError::ImportInfeasible { ref what, .. } if what.contains("cap")));
        // Fractional binary.
        let err = import_solution(&m, "pick 0.4\nlevel 0\nfree_term 0\n").unwrap_err();
        assert!(
            matches!(err, SolveError::ImportInfeasible { ref what, .. } if what.contains("integrality"))
        );
        // Bound violation.
        let err = import_solution(&m, "pick 0\nlevel -3.5\nfree_term -3.5\n").unwrap_err();
        assert!(matches!(err, SolveError::ImportInfeasible { ref what, .. } if what.contains("bounds")));
    }
}
