//! In-house LP and mixed-binary solver.
//!
//! The planning formulations compile to models small enough that a careful
//! dense simplex plus best-first branch-and-bound solves them exactly and
//! deterministically, with no external solver dependency. [`solve_lp`] is the
//! bounded-variable simplex; [`solve_mip`] wraps it in branch-and-bound over
//! the binary variables of a [`MipModel`]. Models can also be exported in MPS
//! form for cross-checking against other solvers ([`export_mps`]) and their
//! solutions read back and re-verified ([`import_solution`]).

mod mps;
mod simplex;

pub use mps::{export_mps, import_solution, MpsExport};
pub use simplex::solve_lp;

use crate::compile::{MipModel, Sense, VarKind};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;
use thiserror::Error;

/// Row comparison sense in an [`LpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

impl From<Sense> for RowSense {
    fn from(s: Sense) -> Self {
        match s {
            Sense::Le => RowSense::Le,
            Sense::Ge => RowSense::Ge,
            Sense::Eq => RowSense::Eq,
        }
    }
}

/// One linear constraint, sparse over variable indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// A linear program `min c.x` over box-bounded variables. Bounds may be
/// infinite; duplicate coefficients within a row accumulate.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
}

/// Optimal LP answer: primal point, row duals, and the strong-duality value
/// (equal to the objective up to factorization roundoff).
#[derive(Debug, Clone, PartialEq)]
pub struct LpOptimal {
    pub x: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub dual_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpOptimal),
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid problem: {0}")]
    BadInput(String),
    #[error("problem is unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("simplex iteration limit exceeded")]
    IterationLimit,
    #[error("solution import: {0}")]
    Import(String),
    #[error("imported solution violates {what} by {residual:.3e}")]
    ImportInfeasible { what: String, residual: f64 },
}

/// Branch-and-bound controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MipConfig {
    /// Terminate when `(incumbent - bound) / max(1, |incumbent|)` drops here.
    pub gap_tol: f64,
    /// Binary values within this of an integer count as integral.
    pub integrality_tol: f64,
    pub node_limit: usize,
    pub time_limit_secs: f64,
}

impl Default for MipConfig {
    fn default() -> Self {
        MipConfig {
            gap_tol: 1e-6,
            integrality_tol: 1e-6,
            node_limit: 1_000_000,
            time_limit_secs: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
}

/// Branch-and-bound result. `objective`/`assignment` are present whenever an
/// incumbent was found, even on limit statuses.
#[derive(Debug, Clone, PartialEq)]
pub struct MipSolution {
    pub status: MipStatus,
    pub objective: Option<f64>,
    /// Best proven lower bound on the optimum.
    pub best_bound: f64,
    pub assignment: Option<Vec<f64>>,
    pub nodes_processed: usize,
    /// Relative gap at termination (0 when proven optimal, inf without an
    /// incumbent).
    pub gap: f64,
    /// `(nodes_processed, best_bound)` snapshots, non-decreasing in bound.
    pub bound_history: Vec<(usize, f64)>,
}

/// Heap entry ordered so the max-heap pops the smallest bound first, with
/// creation order breaking ties for determinism.
struct Entry {
    bound: f64,
    seq: u64,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Best (lowest) bound first; among equal bounds pop the newest node
        // so plateaus are plunged depth-first instead of flooding the heap.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

/// Branching decision stored per node; bounds are reconstructed by walking
/// the parent chain instead of cloning bound vectors into every node.
struct NodeRec {
    parent: usize,
    var: usize,
    fix: u8,
}

const NO_NODE: usize = usize::MAX;

/// Split the binaries into exactly-one-of groups and loose singles. A row
/// `sum x_j = 1` whose columns are all binary with unit coefficients is a
/// choice (set-partitioning) row; rounding respects it by putting the one on
/// the largest member instead of thresholding each member separately.
fn detect_choice_groups(
    base: &LpProblem,
    binaries: &[usize],
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = base.lower.len();
    let mut is_binary = vec![false; n];
    for &j in binaries {
        is_binary[j] = true;
    }
    let mut owned = vec![false; n];
    let mut groups = Vec::new();
    for row in &base.rows {
        if row.sense != RowSense::Eq
            || (row.rhs - 1.0).abs() > 1e-12
            || row.coeffs.len() < 2
        {
            continue;
        }
        let qualifies = row
            .coeffs
            .iter()
            .all(|&(j, a)| is_binary[j] && !owned[j] && (a - 1.0).abs() <= 1e-12);
        if !qualifies {
            continue;
        }
        for &(j, _) in &row.coeffs {
            owned[j] = true;
        }
        groups.push(row.coeffs.iter().map(|&(j, _)| j).collect());
    }
    let free = binaries.iter().copied().filter(|&j| !owned[j]).collect();
    (groups, free)
}

/// Feasibility pump: alternate between rounding the binaries and projecting
/// back onto the LP relaxation (minimizing the l1 distance to the rounding)
/// until the projection itself comes back integral. Returns a polished
/// incumbent (binaries fixed, true objective re-optimized) or `None`; purely
/// a heuristic, so failures are silent and the exact search carries on.
fn feasibility_pump(
    base: &LpProblem,
    binaries: &[usize],
    root_x: &[f64],
) -> Result<Option<(f64, Vec<f64>)>, SolveError> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x70_75_6d_70);
    let (groups, free) = detect_choice_groups(base, binaries);

    let n = base.lower.len();
    let round = |x: &[f64], target: &mut Vec<u8>| {
        target.iter_mut().for_each(|t| *t = 0);
        for group in &groups {
            let mut best = group[0];
            for &j in group {
                if x[j] > x[best] {
                    best = j;
                }
            }
            target[best] = 1;
        }
        for &j in &free {
            target[j] = u8::from(x[j] >= 0.5);
        }
    };

    let mut target = vec![0u8; n];
    round(root_x, &mut target);
    let mut pump = base.clone();
    for _ in 0..60 {
        pump.objective.iter_mut().for_each(|c| *c = 0.0);
        for &j in binaries {
            pump.objective[j] = if target[j] == 1 { -1.0 } else { 1.0 };
        }
        let sol = match solve_lp(&pump)? {
            LpOutcome::Optimal(sol) => sol,
            _ => return Ok(None),
        };
        let integral = binaries
            .iter()
            .all(|&j| (sol.x[j] - sol.x[j].round()).abs() <= 1e-7);
        if integral {
            let mut fixed = base.clone();
            for &j in binaries {
                let v = sol.x[j].round();
                fixed.lower[j] = v;
                fixed.upper[j] = v;
            }
            return Ok(match solve_lp(&fixed)? {
                LpOutcome::Optimal(best) => Some((best.objective, best.x)),
                _ => {
                    let obj = base
                        .objective
                        .iter()
                        .zip(&sol.x)
                        .map(|(c, v)| c * v)
                        .sum();
                    Some((obj, sol.x))
                }
            });
        }
        let mut next = vec![0u8; n];
        round(&sol.x, &mut next);
        if next == target {
            // Rounding cycle: re-seat a few random groups and flip a few
            // loose binaries to escape.
            let kicks = ((groups.len() + free.len()) / 8).max(1);
            for _ in 0..kicks {
                let pick = rng.random_range(0..groups.len() + free.len().max(1));
                if pick < groups.len() {
                    let group = &groups[pick];
                    for &j in group {
                        target[j] = 0;
                    }
                    target[group[rng.random_range(0..group.len())]] = 1;
                } else if !free.is_empty() {
                    let j = free[rng.random_range(0..free.len())];
                    target[j] ^= 1;
                }
            }
        } else {
            target = next;
        }
    }
    Ok(None)
}

/// Best-first branch-and-bound on the binary variables of `model`.
///
/// Each node re-solves the LP relaxation with branching bounds applied;
/// children inherit `max(parent bound, relaxation objective)` so bounds are
/// monotone along any path. Branching picks the fractional binary with the
/// largest value (lowest index on ties); its one-fix child is plunged
/// immediately while the zero-fix sibling joins the best-first heap.
/// Deterministic for a given model and configuration, apart from the
/// wall-clock cutoff.
pub fn solve_mip(model: &MipModel, config: &MipConfig) -> Result<MipSolution, SolveError> {
    let base = LpProblem {
        lower: model.vars.iter().map(|v| v.lower).collect(),
        upper: model.vars.iter().map(|v| v.upper).collect(),
        objective: model.objective.clone(),
        rows: model
            .rows
            .iter()
            .map(|r| LpRow { coeffs: r.coeffs.clone(), sense: r.sense.into(), rhs: r.rhs })
            .collect(),
    };
    for (j, var) in model.vars.iter().enumerate() {
        if var.kind == VarKind::Binary && (var.lower < -1e-12 || var.upper > 1.0 + 1e-12) {
            return Err(SolveError::BadInput(format!(
                "binary variable {j} has bounds [{}, {}] outside [0, 1]",
                var.lower, var.upper
            )));
        }
    }
    let binaries = model.binary_indices();
    let start = Instant::now();

    let mut arena: Vec<NodeRec> = vec![NodeRec { parent: NO_NODE, var: NO_NODE, fix: 0 }];
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    heap.push(Entry { bound: f64::NEG_INFINITY, seq: 0, node: 0 });
    let mut seq: u64 = 1;

    let mut incumbent_obj = f64::INFINITY;
    let mut incumbent_x: Option<Vec<f64>> = None;
    let mut best_bound = f64::NEG_INFINITY;
    let mut nodes_processed = 0usize;
    let mut bound_history: Vec<(usize, f64)> = Vec::new();
    let mut status: Option<MipStatus> = None;

    let mut lower = base.lower.clone();
    let mut upper = base.upper.clone();

    'outer: while let Some(entry) = heap.pop() {
        if entry.bound > best_bound {
            best_bound = entry.bound;
            if best_bound.is_finite() {
                bound_history.push((nodes_processed, best_bound));
            }
        }
        if incumbent_obj.is_finite() {
            let bound_now = best_bound.max(entry.bound);
            let gap = (incumbent_obj - bound_now) / incumbent_obj.abs().max(1.0);
            if gap <= config.gap_tol || entry.bound >= incumbent_obj - 1e-9 {
                status = Some(MipStatus::Optimal);
                best_bound = best_bound.max(incumbent_obj.min(bound_now.max(best_bound)));
                break;
            }
        }

        // Process the popped node, then plunge: keep descending into the
        // child the relaxation already leans toward while the sibling goes to
        // the heap. Dives reach integral (or fathomed) leaves quickly even
        // when the bound plateau is flat, where pure best-first would flood
        // the frontier without ever producing an incumbent.
        let mut cur_node = entry.node;
        let mut cur_bound = entry.bound;
        loop {
            if nodes_processed >= config.node_limit {
                status = Some(MipStatus::NodeLimit);
                break 'outer;
            }
            if start.elapsed().as_secs_f64() > config.time_limit_secs {
                status = Some(MipStatus::TimeLimit);
                break 'outer;
            }
            if incumbent_obj.is_finite() && cur_bound >= incumbent_obj - 1e-9 {
                break; // fathomed by the incumbent
            }

            // Reapply branching fixes along this node's ancestry.
            lower.copy_from_slice(&base.lower);
            upper.copy_from_slice(&base.upper);
            let mut cursor = cur_node;
            while cursor != NO_NODE {
                let rec = &arena[cursor];
                if rec.var != NO_NODE {
                    lower[rec.var] = rec.fix as f64;
                    upper[rec.var] = rec.fix as f64;
                }
                cursor = rec.parent;
            }

            nodes_processed += 1;
            let lp = LpProblem {
                lower: lower.clone(),
                upper: upper.clone(),
                objective: base.objective.clone(),
                rows: base.rows.clone(),
            };
            let sol = match solve_lp(&lp)? {
                LpOutcome::Infeasible => break,
                LpOutcome::Unbounded => return Err(SolveError::Unbounded),
                LpOutcome::Optimal(sol) => sol,
            };
            let node_bound = cur_bound.max(sol.objective);
            if node_bound >= incumbent_obj - 1e-9 {
                break;
            }

            // Branch on the fractional binary with the largest value (lowest
            // index on ties): plunging it to one commits to the alternative
            // the relaxation already prefers, which in one-of-many selection
            // structures settles a whole group per dive step.
            let mut branch: Option<(usize, f64)> = None;
            for &j in &binaries {
                if upper[j] - lower[j] <= 0.0 {
                    continue; // already fixed on this path
                }
                let v = sol.x[j];
                let frac = (v - v.round()).abs();
                if frac <= config.integrality_tol {
                    continue;
                }
                match branch {
                    Some((_, best)) if v <= best => {}
                    _ => branch = Some((j, v)),
                }
            }

            match branch {
                None => {
                    if sol.objective < incumbent_obj {
                        incumbent_obj = sol.objective;
                        incumbent_x = Some(sol.x);
                    }
                    break;
                }
                Some((j, _)) => {
                    // A fractional root: try to pump out an incumbent before
                    // growing the tree, so the gap test has both sides.
                    if nodes_processed == 1 && !incumbent_obj.is_finite() {
                        if let Some((obj, x)) = feasibility_pump(&base, &binaries, &sol.x)? {
                            incumbent_obj = obj;
                            incumbent_x = Some(x);
                            if node_bound >= incumbent_obj - 1e-9 {
                                break;
                            }
                        }
                    }
                    arena.push(NodeRec { parent: cur_node, var: j, fix: 0 });
                    heap.push(Entry { bound: node_bound, seq, node: arena.len() - 1 });
                    seq += 1;
                    arena.push(NodeRec { parent: cur_node, var: j, fix: 1 });
                    cur_node = arena.len() - 1;
                    cur_bound = node_bound;
                }
            }
        }
    }

    let status = status.unwrap_or({
        // Heap drained: the search space is exhausted.
        if incumbent_x.is_some() {
            MipStatus::Optimal
        } else {
            MipStatus::Infeasible
        }
    });
    if status == MipStatus::Optimal {
        best_bound = incumbent_obj;
    }
    if status == MipStatus::Infeasible {
        best_bound = f64::INFINITY;
    }
    let gap = match (status, incumbent_x.is_some()) {
        (MipStatus::Optimal, _) => 0.0,
        (_, true) => (incumbent_obj - best_bound) / incumbent_obj.abs().max(1.0),
        (_, false) => f64::INFINITY,
    };
    if best_bound.is_finite()
        && bound_history.last().map(|&(_, b)| b != best_bound).unwrap_or(true)
    {
        bound_history.push((nodes_processed, best_bound));
    }

    Ok(MipSolution {
        status,
        objective: incumbent_x.as_ref().map(|_| incumbent_obj),
        best_bound,
        assignment: incumbent_x,
        nodes_processed,
        gap,
        bound_history,
    })
}
