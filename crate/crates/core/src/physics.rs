//! Exact steady-state flow physics and feasibility restoration.
//!
//! The pressure-flow coupling per pipe is `phi*|phi| = omega * (pi_i - pi_j)`
//! where pi are squared pressures; in expansion mode the diameter-normalized
//! form `phi*|phi| / d = omega_hat * (pi_i - pi_j)` is used with omega =
//! omega_hat * d. `newton_restore` recovers an exactly-feasible (phi, pi) for
//! fixed injections by solving mass balance plus the coupling with a damped
//! Newton iteration, anchoring the reference node's pressure at its upper
//! bound. Restoration never moves injections (or diameters), so a restored
//! candidate keeps its original cost.

use crate::netmodel::{GasNetwork, Mode, PlanningProblem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Newton convergence: infinity norm of the stacked residual.
const NEWTON_TOL: f64 = 1e-10;
/// Hard iteration cap for Newton restoration.
const NEWTON_MAX_ITER: usize = 100;
/// Step halvings tried before declaring a stall.
const NEWTON_MAX_HALVINGS: usize = 20;
/// Floor on |phi| in the Jacobian so a zero-flow pipe does not make the
/// system singular; the convergence test uses the true residual, so the
/// floor cannot bias a converged answer.
const JACOBIAN_FLOW_FLOOR: f64 = 1e-8;

/// A full network operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    /// Supply injection per node (theta), Mm3/day.
    pub injections: Vec<f64>,
    /// Signed flow per pipeline (phi), Mm3/day.
    pub flows: Vec<f64>,
    /// Squared pressure per node (pi), bar^2.
    pub squared_pressures: Vec<f64>,
    /// Pipeline diameters, mm; present in expansion-mode states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameters: Option<Vec<f64>>,
}

/// Feasibility and accounting summary for a [`FlowState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Infinity norm of `A*phi - (theta - delta)`.
    pub mass_residual_inf: f64,
    /// Infinity norm of the pressure-flow coupling residual.
    pub weymouth_residual_inf: f64,
    /// Worst violation of any variable box (injections, flows, pressures, diameters).
    pub bound_violation_inf: f64,
    /// Total emissions e^T theta, kT/day.
    pub emission_total: f64,
    /// Supply cost plus (in expansion mode) expansion cost, EUR-scale.
    pub cost_total: f64,
}

impl FeasibilityReport {
    /// Residuals within `tol` and boxes respected within `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.mass_residual_inf <= tol
            && self.weymouth_residual_inf <= tol
            && self.bound_violation_inf <= tol
    }
}

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("injections do not balance total demand: sum(theta) = {supply}, sum(delta) = {demand}")]
    Unbalanced { supply: f64, demand: f64 },
    #[error("diameter must be positive, got {0}")]
    NonPositiveDiameter(f64),
    #[error("expansion-mode state is missing diameters")]
    MissingDiameters,
    #[error("Newton restoration failed to converge: residual {residual} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("Jacobian is singular at iteration {0}")]
    SingularJacobian(usize),
}

/// Signed flow term `phi * |phi|`: convex for phi >= 0, concave for phi <= 0.
pub fn weymouth_lhs(phi: f64) -> f64 {
    phi * phi.abs()
}

/// Diameter-normalized flow term `phi * |phi| / d`.
pub fn weymouth_lhs_dyn(phi: f64, d: f64) -> Result<f64, PhysicsError> {
    if !(d > 0.0) {
        return Err(PhysicsError::NonPositiveDiameter(d));
    }
    Ok(phi * phi.abs() / d)
}

fn check_dims(net: &GasNetwork, state: &FlowState) -> Result<(), PhysicsError> {
    let n = net.node_count();
    let l = net.pipe_count();
    if state.injections.len() != n {
        return Err(PhysicsError::Dimension { what: "injections", expected: n, got: state.injections.len() });
    }
    if state.flows.len() != l {
        return Err(PhysicsError::Dimension { what: "flows", expected: l, got: state.flows.len() });
    }
    if state.squared_pressures.len() != n {
        return Err(PhysicsError::Dimension {
            what: "squared pressures",
            expected: n,
            got: state.squared_pressures.len(),
        });
    }
    if let Some(d) = &state.diameters {
        if d.len() != l {
            return Err(PhysicsError::Dimension { what: "diameters", expected: l, got: d.len() });
        }
    }
    Ok(())
}

/// Evaluate residuals, bound violations, and accounting for a state.
///
/// When the state carries diameters the diameter-normalized coupling is
/// checked (and diameters count toward bound violations and cost); otherwise
/// the installed-friction coupling is used.
pub fn residuals(net: &GasNetwork, state: &FlowState) -> Result<FeasibilityReport, PhysicsError> {
    check_dims(net, state)?;
    let n = net.node_count();
    let l = net.pipe_count();

    let mut mass = 0.0f64;
    for i in 0..n {
        let mut ax = 0.0;
        for j in 0..l {
            let (from, to) = net.endpoints(j);
            if from == i {
                ax += state.flows[j];
            } else if to == i {
                ax -= state.flows[j];
            }
        }
        let r = ax - (state.injections[i] - net.nodes[i].demand);
        mass = mass.max(r.abs());
    }

    let mut weym = 0.0f64;
    for j in 0..l {
        let (from, to) = net.endpoints(j);
        let dpi = state.squared_pressures[from] - state.squared_pressures[to];
        let r = match &state.diameters {
            Some(d) => weymouth_lhs_dyn(state.flows[j], d[j])? - net.pipelines[j].friction_per_diameter * dpi,
            None => weymouth_lhs(state.flows[j]) - net.pipelines[j].friction * dpi,
        };
        weym = weym.max(r.abs());
    }

    let mut viol = 0.0f64;
    for i in 0..n {
        let nd = &net.nodes[i];
        viol = viol.max(nd.supply_min - state.injections[i]);
        viol = viol.max(state.injections[i] - nd.supply_max);
        viol = viol.max(nd.pressure_min - state.squared_pressures[i]);
        viol = viol.max(state.squared_pressures[i] - nd.pressure_max);
    }
    for j in 0..l {
        let p = &net.pipelines[j];
        viol = viol.max(p.flow_min - state.flows[j]);
        viol = viol.max(state.flows[j] - p.flow_max);
        if let Some(d) = &state.diameters {
            viol = viol.max(p.d_min() - d[j]);
            viol = viol.max(d[j] - p.d_max());
        }
    }
    viol = viol.max(0.0);

    // Emissions and cost are plain dot products; no scaling beyond the unit
    // convention (kg/m3 x Mm3/day = kT/day).
    let mut emission = 0.0;
    let mut cost = 0.0;
    for i in 0..n {
        emission += net.nodes[i].carbon_intensity * state.injections[i];
        cost += net.nodes[i].supply_cost * state.injections[i];
    }
    if let Some(d) = &state.diameters {
        for j in 0..l {
            cost += net.pipelines[j].expansion_cost * d[j];
        }
    }

    Ok(FeasibilityReport {
        mass_residual_inf: mass,
        weymouth_residual_inf: weym,
        bound_violation_inf: viol,
        emission_total: emission,
        cost_total: cost,
    })
}

/// Restore an exactly-feasible (flows, pressures) point for fixed injections.
///
/// Solves the square system of n-1 mass-balance rows (the reference node's row
/// is redundant once injections balance demand) plus the per-pipe coupling,
/// in the unknowns (phi, pi without the reference node). The reference node's
/// squared pressure is pinned at its upper bound during the solve; because the
/// coupling depends only on pressure differences, the converged pressures are
/// then shifted by a single constant to fit the pressure boxes (no shift when
/// they already fit, the smallest workable shift otherwise). Initialization:
/// pressures at box midpoints, flows at the least-squares solution of
/// `A*phi = theta - delta`. Steps are damped by halving on residual increase.
/// Deterministic.
pub fn newton_restore(
    net: &GasNetwork,
    injections: &[f64],
    reference_node: &str,
) -> Result<FlowState, PhysicsError> {
    newton_restore_inner(net, injections, reference_node, None)
}

/// [`newton_restore`] with frozen per-pipe diameters (expansion-mode physics).
pub fn newton_restore_with_diameters(
    net: &GasNetwork,
    injections: &[f64],
    reference_node: &str,
    diameters: &[f64],
) -> Result<FlowState, PhysicsError> {
    newton_restore_inner(net, injections, reference_node, Some(diameters))
}

/// Bound-violation tolerance under which a restored state counts as fitting
/// its boxes during the diameter scale-up search.
const EXPANSION_FIT_TOL: f64 = 1e-9;

/// Expansion restoration: exact physics for fixed injections, widening the
/// candidate diameters when they cannot carry the dispatch inside the boxes.
///
/// A surrogate-optimal plan tends to sit exactly on the pressure bounds, so
/// the exact pressure drops overshoot them by the surrogate's approximation
/// error. Diameters are decision variables in expansion mode, which gives the
/// restoration a physical remedy: widen pipes slightly (never narrow, never
/// past each pipe's upper bound) until the exact state fits. The widening is
/// the smallest uniform scale factor found by bisection; each probe is a full
/// Newton solve. If even maximal widening does not fit, the restoration at
/// the candidate's own diameters is returned so the caller reports the honest
/// violation.
pub fn newton_restore_expansion(
    net: &GasNetwork,
    injections: &[f64],
    reference_node: &str,
    diameters: &[f64],
) -> Result<FlowState, PhysicsError> {
    let restore = |gamma: f64| -> Result<FlowState, PhysicsError> {
        let d: Vec<f64> = diameters
            .iter()
            .zip(&net.pipelines)
            .map(|(&dj, p)| (dj * gamma).min(p.d_max()))
            .collect();
        newton_restore_with_diameters(net, injections, reference_node, &d)
    };
    let fits = |state: &FlowState| -> Result<bool, PhysicsError> {
        Ok(residuals(net, state)?.bound_violation_inf <= EXPANSION_FIT_TOL)
    };

    let base = restore(1.0)?;
    if fits(&base)? {
        return Ok(base);
    }
    let gamma_max = net
        .pipelines
        .iter()
        .zip(diameters)
        .map(|(p, &dj)| p.d_max() / dj)
        .fold(1.0, f64::max);
    if gamma_max <= 1.0 || !fits(&restore(gamma_max)?)? {
        return Ok(base);
    }

    let (mut lo, mut hi) = (1.0, gamma_max);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if fits(&restore(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    restore(hi)
}

fn newton_restore_inner(
    net: &GasNetwork,
    injections: &[f64],
    reference_node: &str,
    diameters: Option<&[f64]>,
) -> Result<FlowState, PhysicsError> {
    use nalgebra::{DMatrix, DVector};

    let n = net.node_count();
    let l = net.pipe_count();
    if injections.len() != n {
        return Err(PhysicsError::Dimension { what: "injections", expected: n, got: injections.len() });
    }
    if let Some(d) = diameters {
        if d.len() != l {
            return Err(PhysicsError::Dimension { what: "diameters", expected: l, got: d.len() });
        }
        for &dj in d {
            if !(dj > 0.0) {
                return Err(PhysicsError::NonPositiveDiameter(dj));
            }
        }
    }
    let reference = net
        .node_index(reference_node)
        .ok_or_else(|| PhysicsError::Dimension { what: "reference node", expected: n, got: usize::MAX })?;

    let supply: f64 = injections.iter().sum();
    let demand: f64 = net.total_demand();
    if (supply - demand).abs() > 1e-9 * demand.abs().max(1.0) {
        return Err(PhysicsError::Unbalanced { supply, demand });
    }

    // Effective coupling coefficient per pipe and the matching flow term.
    let omega: Vec<f64> = (0..l)
        .map(|j| match diameters {
            Some(_) => net.pipelines[j].friction_per_diameter,
            None => net.pipelines[j].friction,
        })
        .collect();
    let flow_term = |phi: f64, j: usize| -> f64 {
        match diameters {
            Some(d) => phi * phi.abs() / d[j],
            None => phi * phi.abs(),
        }
    };
    let flow_term_slope = |phi: f64, j: usize| -> f64 {
        let s = 2.0 * phi.abs().max(JACOBIAN_FLOW_FLOOR);
        match diameters {
            Some(d) => s / d[j],
            None => s,
        }
    };

    // Free unknowns: all flows, then pressures of non-reference nodes.
    let free_nodes: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let nfree = free_nodes.len();
    let dim = l + nfree;

    let a = net.incidence_matrix();

    // Initial flows: minimum-norm least squares of A*phi = theta - delta.
    let rhs_full = DVector::from_fn(n, |i, _| injections[i] - net.nodes[i].demand);
    let svd = a.clone().svd(true, true);
    let phi0 = svd
        .solve(&rhs_full, 1e-12)
        .map_err(|_| PhysicsError::SingularJacobian(0))?;

    let mut phi: Vec<f64> = phi0.iter().copied().collect();
    let mut pi: Vec<f64> = (0..n)
        .map(|i| 0.5 * (net.nodes[i].pressure_min + net.nodes[i].pressure_max))
        .collect();
    pi[reference] = net.nodes[reference].pressure_max;

    let eval_residual = |phi: &[f64], pi: &[f64]| -> DVector<f64> {
        let mut r = DVector::zeros(dim);
        for (row, &i) in free_nodes.iter().enumerate() {
            let mut ax = 0.0;
            for j in 0..l {
                ax += a[(i, j)] * phi[j];
            }
            r[row] = ax - (injections[i] - net.nodes[i].demand);
        }
        for j in 0..l {
            let (from, to) = net.endpoints(j);
            r[nfree + j] = flow_term(phi[j], j) - omega[j] * (pi[from] - pi[to]);
        }
        r
    };

    let mut residual = eval_residual(&phi, &pi);
    let mut res_norm = residual.amax();

    for iter in 0..NEWTON_MAX_ITER {
        if res_norm <= NEWTON_TOL {
            recenter_pressures(net, &mut pi);
            return Ok(FlowState {
                injections: injections.to_vec(),
                flows: phi,
                squared_pressures: pi,
                diameters: diameters.map(|d| d.to_vec()),
            });
        }

        // Jacobian rows: mass balance over free nodes, then couplings.
        let mut jac = DMatrix::zeros(dim, dim);
        for (row, &i) in free_nodes.iter().enumerate() {
            for j in 0..l {
                jac[(row, j)] = a[(i, j)];
            }
        }
        for j in 0..l {
            let (from, to) = net.endpoints(j);
            jac[(nfree + j, j)] = flow_term_slope(phi[j], j);
            if let Some(col) = free_nodes.iter().position(|&i| i == from) {
                jac[(nfree + j, l + col)] = -omega[j];
            }
            if let Some(col) = free_nodes.iter().position(|&i| i == to) {
                jac[(nfree + j, l + col)] = omega[j];
            }
        }

        let lu = jac.lu();
        let step = lu
            .solve(&(-&residual))
            .ok_or(PhysicsError::SingularJacobian(iter))?;

        // Damped update: halve the step while the residual norm does not drop.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let mut phi_try = phi.clone();
            let mut pi_try = pi.clone();
            for j in 0..l {
                phi_try[j] += alpha * step[j];
            }
            for (col, &i) in free_nodes.iter().enumerate() {
                pi_try[i] += alpha * step[l + col];
            }
            let r_try = eval_residual(&phi_try, &pi_try);
            let norm_try = r_try.amax();
            if norm_try < res_norm {
                phi = phi_try;
                pi = pi_try;
                residual = r_try;
                res_norm = norm_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(PhysicsError::NoConvergence { residual: res_norm, iterations: iter });
        }
    }

    if res_norm <= NEWTON_TOL {
        recenter_pressures(net, &mut pi);
        Ok(FlowState {
            injections: injections.to_vec(),
            flows: phi,
            squared_pressures: pi,
            diameters: diameters.map(|d| d.to_vec()),
        })
    } else {
        Err(PhysicsError::NoConvergence { residual: res_norm, iterations: NEWTON_MAX_ITER })
    }
}

/// Shift all squared pressures by one constant so they fit the node boxes.
///
/// The coupling residual sees only pressure differences, so any uniform shift
/// preserves exact feasibility of the equations. The admissible shifts form the
/// interval `[max_i (min_i - pi_i), min_i (max_i - pi_i)]`; zero is kept when
/// it is admissible (pressures already fit), otherwise the nearest endpoint is
/// taken. When the interval is empty — the pressure spread exceeds what the
/// boxes allow — the midpoint splits the overshoot evenly between the two
/// worst nodes, and the caller's feasibility check reports the remainder.
fn recenter_pressures(net: &GasNetwork, pi: &mut [f64]) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (i, nd) in net.nodes.iter().enumerate() {
        lo = lo.max(nd.pressure_min - pi[i]);
        hi = hi.min(nd.pressure_max - pi[i]);
    }
    let shift = if lo > hi { 0.5 * (lo + hi) } else { 0.0_f64.clamp(lo, hi) };
    if shift != 0.0 && shift.is_finite() {
        for p in pi.iter_mut() {
            *p += shift;
        }
    }
}

/// Restore a candidate state (keeping its injections) and score the result.
///
/// Operationally the restored cost equals the candidate's cost because only
/// flows and pressures move. In expansion mode the diameters may additionally
/// widen (see [`newton_restore_expansion`]), so the restored cost can exceed
/// the candidate's by the extra build cost.
pub fn restore_and_score(
    problem: &PlanningProblem,
    candidate: &FlowState,
) -> Result<(FlowState, FeasibilityReport), PhysicsError> {
    let net = &problem.network;
    let restored = match problem.mode {
        Mode::Operational => newton_restore(net, &candidate.injections, &problem.reference_node)?,
        Mode::Expansion => {
            let d = candidate.diameters.as_ref().ok_or(PhysicsError::MissingDiameters)?;
            newton_restore_expansion(net, &candidate.injections, &problem.reference_node, d)?
        }
    };
    let report = residuals(net, &restored)?;
    Ok((restored, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{GasNetwork, Node, Pipeline};
    use approx::assert_abs_diff_eq;

    fn node(id: &str, demand: f64, supply_max: f64, pressure_max: f64) -> Node {
        Node {
            id: id.to_string(),
            demand,
            supply_cost: 50.0,
            supply_min: 0.0,
            supply_max,
            pressure_min: 1.0,
            pressure_max,
            carbon_intensity: 1.0,
        }
    }

    fn pipe(id: &str, from: &str, to: &str, friction: f64) -> Pipeline {
        Pipeline {
            id: id.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            friction,
            friction_per_diameter: friction / 500.0,
            diameter: 500.0,
            diameter_min: None,
            diameter_max: None,
            flow_min: -10.0,
            flow_max: 10.0,
            expansion_cost: 0.0,
        }
    }

    fn two_node_net() -> GasNetwork {
        GasNetwork::new(
            vec![node("s", 0.0, 10.0, 20.0), node("d", 4.0, 0.0, 20.0)],
            vec![pipe("p1", "s", "d", 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn weymouth_lhs_matches_signed_square() {
        assert_eq!(weymouth_lhs(2.0), 4.0);
        assert_eq!(weymouth_lhs(-3.0), -9.0);
        assert_eq!(weymouth_lhs(0.0), 0.0);
    }

    #[test]
    fn weymouth_lhs_is_odd_on_a_grid() {
        // f(-phi) = -f(phi) across the whole working range.
        for k in 0..10_000 {
            let phi = -50.0 + 100.0 * (k as f64) / 9_999.0;
            assert_eq!(weymouth_lhs(-phi), -weymouth_lhs(phi));
        }
    }

    #[test]
    fn weymouth_dyn_scales_by_diameter() {
        assert_eq!(weymouth_lhs_dyn(2.0, 0.5).unwrap(), 8.0);
        assert!(matches!(
            weymouth_lhs_dyn(1.0, 0.0),
            Err(PhysicsError::NonPositiveDiameter(_))
        ));
        assert!(matches!(
            weymouth_lhs_dyn(1.0, -2.0),
            Err(PhysicsError::NonPositiveDiameter(_))
        ));
    }

    #[test]
    fn residuals_vanish_on_exact_two_node_solution() {
        // phi = 4, omega = 1: pressure drop is 16.
        let net = two_node_net();
        let state = FlowState {
            injections: vec![4.0, 0.0],
            flows: vec![4.0],
            squared_pressures: vec![20.0, 4.0],
            diameters: None,
        };
        let rep = residuals(&net, &state).unwrap();
        assert_eq!(rep.mass_residual_inf, 0.0);
        assert_eq!(rep.weymouth_residual_inf, 0.0);
        assert_eq!(rep.bound_violation_inf, 0.0);
        assert_eq!(rep.emission_total, 4.0);
        assert_eq!(rep.cost_total, 200.0);
    }

    #[test]
    fn residuals_detect_perturbations() {
        let net = two_node_net();
        // Pressure off by 1 -> weymouth residual 1 (omega = 1).
        let state = FlowState {
            injections: vec![4.0, 0.0],
            flows: vec![4.0],
            squared_pressures: vec![20.0, 3.0],
            diameters: None,
        };
        let rep = residuals(&net, &state).unwrap();
        assert_abs_diff_eq!(rep.weymouth_residual_inf, 1.0, epsilon = 1e-12);
        assert_eq!(rep.mass_residual_inf, 0.0);

        // Injection off by 1 -> mass residual 1.
        let state = FlowState {
            injections: vec![5.0, 0.0],
            flows: vec![4.0],
            squared_pressures: vec![20.0, 4.0],
            diameters: None,
        };
        let rep = residuals(&net, &state).unwrap();
        assert_abs_diff_eq!(rep.mass_residual_inf, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn newton_matches_two_node_closed_form() {
        let net = two_node_net();
        let state = newton_restore(&net, &[4.0, 0.0], "s").unwrap();
        // Reference pinned at its upper bound 20; pi_d = 20 - 16/1 = 4.
        assert_abs_diff_eq!(state.squared_pressures[0], 20.0, epsilon = 1e-10);
        assert_abs_diff_eq!(state.squared_pressures[1], 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(state.flows[0], 4.0, epsilon = 1e-8);
        let rep = residuals(&net, &state).unwrap();
        assert!(rep.mass_residual_inf <= 1e-8);
        assert!(rep.weymouth_residual_inf <= 1e-8);
    }

    #[test]
    fn newton_recenters_pressures_when_flow_enters_the_reference() {
        // Supply sits at the non-reference node, so with the reference pinned
        // at its upper bound the supplier's raw pressure would overshoot its
        // box. The uniform shift must bring every pressure back inside while
        // keeping the equations exact.
        let mut net = GasNetwork::new(
            vec![node("a", 3.0, 0.0, 20.0), node("b", 0.0, 10.0, 20.0)],
            vec![pipe("p1", "a", "b", 1.0)],
        )
        .unwrap();
        net.nodes[0].pressure_min = 5.0;
        net.nodes[1].pressure_min = 5.0;
        // Drop b -> a is 9; pinning a at 20 would put b at 29 > 20.
        let state = newton_restore(&net, &[0.0, 3.0], "a").unwrap();
        let rep = residuals(&net, &state).unwrap();
        assert!(rep.weymouth_residual_inf <= 1e-8);
        assert!(rep.mass_residual_inf <= 1e-8);
        assert!(rep.bound_violation_inf <= 1e-9, "shift fits boxes: {rep:?}");
        assert_abs_diff_eq!(state.squared_pressures[1], 20.0, epsilon = 1e-8);
        assert_abs_diff_eq!(state.squared_pressures[0], 11.0, epsilon = 1e-8);
    }

    #[test]
    fn newton_splits_the_overshoot_when_no_shift_fits() {
        // Drop 16 against boxes that only span 10: no shift can fit, so the
        // two violations are balanced and reported honestly.
        let mut net = two_node_net();
        net.nodes[0].pressure_min = 10.0;
        net.nodes[1].pressure_min = 10.0;
        let state = newton_restore(&net, &[4.0, 0.0], "s").unwrap();
        let rep = residuals(&net, &state).unwrap();
        assert!(rep.weymouth_residual_inf <= 1e-8);
        assert_abs_diff_eq!(rep.bound_violation_inf, 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(
            state.squared_pressures[0] - net.nodes[0].pressure_max,
            net.nodes[1].pressure_min - state.squared_pressures[1],
            epsilon = 1e-8
        );
    }

    /// Closed-form oracle for tree networks: flows from leaf-upward mass
    /// balance, pressures by back-substitution from the reference.
    fn tree_oracle(
        net: &GasNetwork,
        injections: &[f64],
        reference: usize,
        order: &[usize],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = net.node_count();
        let l = net.pipe_count();
        // Flows: each pipe carries the net imbalance of the subtree behind it.
        // For a path a-b-c this is cumulative sums; `order` lists pipe indices
        // from the far leaf toward the reference.
        let mut flows = vec![0.0; l];
        let mut carried = vec![0.0; n]; // flow absorbed downstream of node
        for &j in order {
            let (from, to) = net.endpoints(j);
            // Flow on j equals demand-minus-injection accumulated at `to` side.
            let need = net.nodes[to].demand - injections[to] + carried[to];
            flows[j] = need;
            carried[from] += need;
        }
        let mut pi = vec![0.0; n];
        pi[reference] = net.nodes[reference].pressure_max;
        // Walk pipes from reference outward (reverse order).
        for &j in order.iter().rev() {
            let (from, to) = net.endpoints(j);
            pi[to] = pi[from] - weymouth_lhs(flows[j]) / net.pipelines[j].friction;
        }
        (flows, pi)
    }

    #[test]
    fn newton_matches_tree_back_substitution() {
        // a -> b -> c, supply only at a.
        let net = GasNetwork::new(
            vec![
                node("a", 0.0, 10.0, 400.0),
                node("b", 2.0, 0.0, 400.0),
                node("c", 3.0, 0.0, 400.0),
            ],
            vec![pipe("pab", "a", "b", 0.5), pipe("pbc", "b", "c", 0.8)],
        )
        .unwrap();
        let injections = vec![5.0, 0.0, 0.0];
        // Oracle: pipe pbc first (leaf), then pab.
        let (flows, pi) = tree_oracle(&net, &injections, 0, &[1, 0]);
        assert_eq!(flows, vec![5.0, 3.0]);

        let state = newton_restore(&net, &injections, "a").unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(state.flows[j], flows[j], epsilon = 1e-8);
        }
        for i in 0..3 {
            assert_abs_diff_eq!(state.squared_pressures[i], pi[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn newton_rejects_unbalanced_injections() {
        let net = two_node_net();
        let err = newton_restore(&net, &[3.0, 0.0], "s").unwrap_err();
        assert!(matches!(err, PhysicsError::Unbalanced { .. }));
    }

    #[test]
    fn newton_handles_negative_flow_direction() {
        // Supply at the "to" end: flow must come out negative.
        let net = GasNetwork::new(
            vec![node("d", 4.0, 0.0, 20.0), node("s", 0.0, 10.0, 20.0)],
            vec![pipe("p1", "d", "s", 1.0)],
        )
        .unwrap();
        let state = newton_restore(&net, &[0.0, 4.0], "s").unwrap();
        assert_abs_diff_eq!(state.flows[0], -4.0, epsilon = 1e-8);
        // pi_d = pi_s + phi|phi| / omega = 20 - 16 = 4.
        assert_abs_diff_eq!(state.squared_pressures[0], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn restore_and_score_is_a_fixed_point_on_feasible_states() {
        let problem = crate::netmodel::PlanningProblem::new(
            two_node_net(),
            Mode::Operational,
            None,
            "s".to_string(),
        )
        .unwrap();
        let candidate = FlowState {
            injections: vec![4.0, 0.0],
            flows: vec![4.0],
            squared_pressures: vec![20.0, 4.0],
            diameters: None,
        };
        let (restored, report) = restore_and_score(&problem, &candidate).unwrap();
        assert_abs_diff_eq!(restored.flows[0], candidate.flows[0], epsilon = 1e-8);
        assert_abs_diff_eq!(
            restored.squared_pressures[1],
            candidate.squared_pressures[1],
            epsilon = 1e-8
        );
        assert!(report.is_feasible(1e-8));
        assert_eq!(report.cost_total, 200.0);
    }

    #[test]
    fn restored_states_on_toy7_meet_newton_tolerance() {
        // Random balanced injection vectors restore to tight residuals.
        use rand::{Rng, SeedableRng};
        let problem =
            crate::netmodel::load_problem(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy7.json"))
                .unwrap();
        let net = &problem.network;
        let demand = net.total_demand();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let suppliers: Vec<usize> = (0..net.node_count())
            .filter(|&i| net.nodes[i].supply_max > 0.0)
            .collect();
        for _ in 0..20 {
            // Random point in the supply box, rescaled onto the balance plane.
            let mut theta = vec![0.0; net.node_count()];
            loop {
                let mut total = 0.0;
                for &i in &suppliers {
                    theta[i] = rng.random_range(0.0..net.nodes[i].supply_max);
                    total += theta[i];
                }
                if total >= demand {
                    let scale = demand / total;
                    for &i in &suppliers {
                        theta[i] *= scale;
                    }
                    break;
                }
            }
            let state = newton_restore(net, &theta, &problem.reference_node).unwrap();
            let rep = residuals(net, &state).unwrap();
            assert!(rep.mass_residual_inf <= 1e-8, "mass {}", rep.mass_residual_inf);
            assert!(rep.weymouth_residual_inf <= 1e-8, "weym {}", rep.weymouth_residual_inf);
        }
    }

    #[test]
    fn expansion_restore_uses_frozen_diameters() {
        // Same two-node instance but through the diameter-normalized coupling:
        // d = 500, omega_hat = 1/500 , so behaviour matches the static case.
        let mut net = two_node_net();
        net.pipelines[0].friction_per_diameter = 1.0 / 500.0;
        let state = newton_restore_with_diameters(&net, &[4.0, 0.0], "s", &[500.0]).unwrap();
        assert_abs_diff_eq!(state.squared_pressures[1], 4.0, epsilon = 1e-8);
        assert_eq!(state.diameters, Some(vec![500.0]));
        // A doubled diameter halves the pressure drop.
        let state2 = newton_restore_with_diameters(&net, &[4.0, 0.0], "s", &[1000.0]).unwrap();
        assert_abs_diff_eq!(state2.squared_pressures[1], 12.0, epsilon = 1e-8);
    }
}
