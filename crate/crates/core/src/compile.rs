//! Compilation of planning problems into mixed-integer linear models.
//!
//! Two formulations are produced over the same variable core (injections,
//! flows, squared pressures, and in expansion mode diameters):
//!
//! - the envelope indicator form: each pipe's convex/concave flow terms are
//!   represented by auxiliary outputs `t_plus`/`t_minus` pinned to their
//!   piecewise-linear envelopes through big-M optimality conditions with one
//!   binary per supporting hyperplane, coupled by
//!   `t_plus + t_minus = omega * (pi_from - pi_to)`;
//! - the tangent-cut relaxation: one direction binary per pipe and products
//!   `z = x * pi` linearized with pressure-box big-Ms, with the quadratic
//!   pressure-drop inequality outer-approximated by tangent cuts to phi^2.
//!
//! Models carry symbol annotations so solutions can be mapped back to network
//! quantities without relying on variable name parsing.

use crate::icnn::{Envelope, Orientation};
use crate::netmodel::{Mode, PlanningProblem};
use crate::physics::FlowState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Variable kind in a [`MipModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

/// What a model variable means in network terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symbol {
    /// Supply injection theta at a node.
    Injection(usize),
    /// Squared pressure pi at a node.
    Pressure(usize),
    /// Signed flow phi on a pipe.
    Flow(usize),
    /// Diameter d of a pipe (expansion mode).
    Diameter(usize),
    /// Convex flow-term output t_plus of a pipe.
    ConvexTerm(usize),
    /// Concave flow-term output t_minus of a pipe.
    ConcaveTerm(usize),
    /// Plane-selection binary for the convex envelope of a pipe.
    PlaneChoicePlus { pipe: usize, plane: usize },
    /// Plane-selection binary for the concave envelope of a pipe.
    PlaneChoiceMinus { pipe: usize, plane: usize },
    /// Flow-direction binary of a pipe (tangent-cut relaxation).
    FlowDirection(usize),
    /// Linearized product z = x * pi for a pipe/node pair.
    PressureProduct { pipe: usize, node: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
    pub symbol: Option<Symbol>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipRow {
    pub name: String,
    /// Sparse (column, coefficient) pairs, column-sorted, no duplicates.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A mixed-integer linear model: minimize `objective . x` subject to rows and
/// variable boxes. Planning models are boxed by construction (finite bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipModel {
    pub vars: Vec<MipVar>,
    pub rows: Vec<MipRow>,
    /// Dense objective coefficients, one per variable.
    pub objective: Vec<f64>,
}

impl MipModel {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of variables annotated with `symbol`.
    pub fn find_symbol(&self, pred: impl Fn(&Symbol) -> bool) -> Vec<usize> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.symbol.as_ref().map(|s| pred(s)).unwrap_or(false))
            .map(|(i, _)| i)
            .collect()
    }

    fn push_var(
        &mut self,
        name: String,
        lower: f64,
        upper: f64,
        kind: VarKind,
        symbol: Option<Symbol>,
        obj: f64,
    ) -> usize {
        self.vars.push(MipVar { name, lower, upper, kind, symbol });
        self.objective.push(obj);
        self.vars.len() - 1
    }

    fn push_row(&mut self, name: String, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(MipRow { name, coeffs, sense, rhs });
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("pipe {pipe}: no {side} envelope provided")]
    MissingEnvelope { pipe: String, side: &'static str },
    #[error("got {got} envelope pairs for {expected} pipes")]
    EnvelopeCount { got: usize, expected: usize },
    #[error("pipe {pipe}: the {side} envelope has the wrong orientation")]
    EnvelopeOrientation { pipe: String, side: &'static str },
    #[error("pipe {pipe}: envelope domain {domain:?} does not cover required box {needed:?}")]
    EnvelopeDomain {
        pipe: String,
        domain: Vec<(f64, f64)>,
        needed: Vec<(f64, f64)>,
    },
    #[error("pipe {pipe}: envelope input dimension {got}, expected {expected}")]
    EnvelopeDim { pipe: String, got: usize, expected: usize },
    #[error("{formulation} formulation does not support {mode:?} mode")]
    UnsupportedMode { formulation: &'static str, mode: Mode },
    #[error("tangent_cut_count must be at least 2, got {0}")]
    TooFewCuts(usize),
    #[error("solution is missing an annotation for {0}")]
    MissingAnnotation(String),
    #[error("assignment length {got} does not match model variables {expected}")]
    AssignmentLength { got: usize, expected: usize },
}

/// How the indicator big-M constant is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BigMStrategy {
    /// Tightest valid constant from envelope geometry (corner formula).
    Derived,
    /// A fixed constant supplied by the caller.
    Fixed(f64),
}

/// Options shared by the model builders.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub big_m: BigMStrategy,
    /// Tangent cuts per pipe for the relaxation (>= 2).
    pub tangent_cut_count: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { big_m: BigMStrategy::Derived, tangent_cut_count: 16 }
    }
}

/// Convex/concave envelope pair for one pipe.
#[derive(Debug, Clone)]
pub struct EnvelopePair {
    pub convex: Envelope,
    pub concave: Envelope,
}

/// Valid indicator constant for an envelope over a box: the largest gap
/// between any two hyperplanes over the box corners,
/// `M = max_{i,j} max_corner (w_j.x + v_j) - (w_i.x + v_i)`.
/// Affine gaps attain their maximum at corners, so the corner formula is
/// exact and minimal among per-envelope constants.
pub fn compute_big_m(envelope: &Envelope, domain: &[(f64, f64)]) -> f64 {
    let planes = envelope.planes();
    if planes.len() <= 1 {
        return 0.0;
    }
    let dim = domain.len();
    let corners = 1usize << dim;
    let mut m = 0.0f64;
    for c in 0..corners {
        let x: Vec<f64> = (0..dim)
            .map(|k| if c >> k & 1 == 1 { domain[k].1 } else { domain[k].0 })
            .collect();
        let vals: Vec<f64> = planes.iter().map(|p| p.eval(&x)).collect();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        m = m.max(hi - lo);
    }
    m
}

/// Map a solved assignment back to a [`FlowState`] using symbol annotations.
pub fn extract_solution(
    problem: &PlanningProblem,
    model: &MipModel,
    assignment: &[f64],
) -> Result<FlowState, CompileError> {
    if assignment.len() != model.num_vars() {
        return Err(CompileError::AssignmentLength {
            got: assignment.len(),
            expected: model.num_vars(),
        });
    }
    let net = &problem.network;
    let n = net.node_count();
    let l = net.pipe_count();

    let mut injections = vec![f64::NAN; n];
    let mut pressures = vec![f64::NAN; n];
    let mut flows = vec![f64::NAN; l];
    let mut diameters = vec![f64::NAN; l];
    let mut has_diameters = false;

    for (idx, var) in model.vars.iter().enumerate() {
        match var.symbol {
            Some(Symbol::Injection(i)) => injections[i] = assignment[idx],
            Some(Symbol::Pressure(i)) => pressures[i] = assignment[idx],
            Some(Symbol::Flow(j)) => flows[j] = assignment[idx],
            Some(Symbol::Diameter(j)) => {
                diameters[j] = assignment[idx];
                has_diameters = true;
            }
            _ => {}
        }
    }

    for (i, v) in injections.iter().enumerate() {
        if v.is_nan() {
            return Err(CompileError::MissingAnnotation(format!("injection at node {}", net.nodes[i].id)));
        }
    }
    for (i, v) in pressures.iter().enumerate() {
        if v.is_nan() {
            return Err(CompileError::MissingAnnotation(format!("pressure at node {}", net.nodes[i].id)));
        }
    }
    for (j, v) in flows.iter().enumerate() {
        if v.is_nan() {
            return Err(CompileError::MissingAnnotation(format!("flow on pipe {}", net.pipelines[j].id)));
        }
    }
    if has_diameters {
        for (j, v) in diameters.iter().enumerate() {
            if v.is_nan() {
                return Err(CompileError::MissingAnnotation(format!(
                    "diameter on pipe {}",
                    net.pipelines[j].id
                )));
            }
        }
    }

    Ok(FlowState {
        injections,
        flows,
        squared_pressures: pressures,
        diameters: if has_diameters { Some(diameters) } else { None },
    })
}

/// Variable indices of the shared network core (injections are only used
/// inside the core rows, so they are not carried out).
struct CoreVars {
    pressures: Vec<usize>,
    flows: Vec<usize>,
}

/// Push the core variables, mass-balance rows, and (when the cap is finite)
/// the emission budget row. Shared by every formulation.
fn push_core(problem: &PlanningProblem, model: &mut MipModel) -> CoreVars {
    let net = &problem.network;
    let mut injections = Vec::with_capacity(net.node_count());
    let mut pressures = Vec::with_capacity(net.node_count());
    let mut flows = Vec::with_capacity(net.pipe_count());

    for (i, node) in net.nodes.iter().enumerate() {
        injections.push(model.push_var(
            format!("theta[{}]", node.id),
            node.supply_min,
            node.supply_max,
            VarKind::Continuous,
            Some(Symbol::Injection(i)),
            node.supply_cost,
        ));
    }
    for (i, node) in net.nodes.iter().enumerate() {
        pressures.push(model.push_var(
            format!("pi[{}]", node.id),
            node.pressure_min,
            node.pressure_max,
            VarKind::Continuous,
            Some(Symbol::Pressure(i)),
            0.0,
        ));
    }
    for (l, pipe) in net.pipelines.iter().enumerate() {
        flows.push(model.push_var(
            format!("phi[{}]", pipe.id),
            pipe.flow_min,
            pipe.flow_max,
            VarKind::Continuous,
            Some(Symbol::Flow(l)),
            0.0,
        ));
    }

    // Mass balance: outflow minus inflow equals injection minus demand, i.e.
    // sum_l A[i,l] phi_l - theta_i = -delta_i.
    for (i, node) in net.nodes.iter().enumerate() {
        let mut coeffs = vec![(injections[i], -1.0)];
        for l in 0..net.pipe_count() {
            let (from, to) = net.endpoints(l);
            if from == i {
                coeffs.push((flows[l], 1.0));
            } else if to == i {
                coeffs.push((flows[l], -1.0));
            }
        }
        model.push_row(format!("balance[{}]", node.id), coeffs, Sense::Eq, -node.demand);
    }

    if let Some(cap) = problem.emission_cap {
        if cap.is_finite() {
            let coeffs: Vec<(usize, f64)> = net
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.carbon_intensity != 0.0)
                .map(|(i, n)| (injections[i], n.carbon_intensity))
                .collect();
            model.push_row("emission_cap".to_string(), coeffs, Sense::Le, cap);
        }
    }

    CoreVars { pressures, flows }
}

/// Check one side's envelope against the pipe's required input box.
fn validate_envelope(
    pipe_id: &str,
    env: &Envelope,
    expected: Orientation,
    needed: &[(f64, f64)],
    side: &'static str,
) -> Result<(), CompileError> {
    if env.planes().is_empty() {
        return Err(CompileError::MissingEnvelope { pipe: pipe_id.to_string(), side });
    }
    if env.orientation() != expected {
        return Err(CompileError::EnvelopeOrientation { pipe: pipe_id.to_string(), side });
    }
    if env.input_dim() != needed.len() {
        return Err(CompileError::EnvelopeDim {
            pipe: pipe_id.to_string(),
            got: env.input_dim(),
            expected: needed.len(),
        });
    }
    for (k, &(lo, hi)) in needed.iter().enumerate() {
        let (dlo, dhi) = env.domain()[k];
        let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        if dlo > lo + tol || dhi < hi - tol {
            return Err(CompileError::EnvelopeDomain {
                pipe: pipe_id.to_string(),
                domain: env.domain().to_vec(),
                needed: needed.to_vec(),
            });
        }
    }
    Ok(())
}

/// Valid bounds for the envelope output over an input box: extremes of the
/// plane values over the corners (exact for a max/min of affine functions).
fn term_bounds(env: &Envelope, domain: &[(f64, f64)]) -> (f64, f64) {
    let dim = domain.len();
    let corners = 1usize << dim;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in 0..corners {
        let x: Vec<f64> = (0..dim)
            .map(|k| if c >> k & 1 == 1 { domain[k].1 } else { domain[k].0 })
            .collect();
        let val = env.eval(&x);
        lo = lo.min(val);
        hi = hi.max(val);
    }
    (lo, hi)
}

/// For each kept plane, the axis-aligned span of the sub-region of
/// `input_box` where it attains the envelope, or `None` when it never does
/// there (possible when the pipe's box is narrower than the training domain).
/// Spans come from small LPs over the winning region: the box intersected
/// with the half-spaces where the plane beats every sibling.
fn plane_spans(env: &Envelope, input_box: &[(f64, f64)]) -> Vec<Option<Vec<(f64, f64)>>> {
    use crate::solve::{solve_lp, LpOutcome, LpProblem, LpRow, RowSense};
    let planes = env.planes();
    let dim = input_box.len();
    let sign = match env.orientation() {
        Orientation::Convex => 1.0,
        Orientation::Concave => -1.0,
    };
    let mut spans = Vec::with_capacity(planes.len());
    for (i, pi) in planes.iter().enumerate() {
        let rows: Vec<LpRow> = planes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, pj)| LpRow {
                coeffs: (0..dim).map(|k| (k, sign * (pi.slope[k] - pj.slope[k]))).collect(),
                sense: RowSense::Ge,
                rhs: sign * (pj.intercept - pi.intercept),
            })
            .collect();
        let template = LpProblem {
            lower: input_box.iter().map(|b| b.0).collect(),
            upper: input_box.iter().map(|b| b.1).collect(),
            objective: vec![0.0; dim],
            rows,
        };
        let mut span = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut lp = template.clone();
            lp.objective[k] = 1.0;
            let lo = match solve_lp(&lp) {
                Ok(LpOutcome::Optimal(s)) => s.objective,
                _ => break,
            };
            lp.objective[k] = -1.0;
            let hi = match solve_lp(&lp) {
                Ok(LpOutcome::Optimal(s)) => -s.objective,
                _ => break,
            };
            span.push((lo, hi));
        }
        spans.push(if span.len() == dim { Some(span) } else { None });
    }
    spans
}

/// Tightest valid per-plane indicator constants over the box: `M_i` bounds
/// how slack plane `i` can be, `max_x env(x) - p_i(x)` (convex; mirrored for
/// concave). The difference is convex, so box corners attain the maximum.
fn per_plane_big_m(env: &Envelope, input_box: &[(f64, f64)]) -> Vec<f64> {
    let planes = env.planes();
    let dim = input_box.len();
    let corners = 1usize << dim;
    let sign = match env.orientation() {
        Orientation::Convex => 1.0,
        Orientation::Concave => -1.0,
    };
    planes
        .iter()
        .map(|p| {
            let mut m = 0.0f64;
            for c in 0..corners {
                let x: Vec<f64> = (0..dim)
                    .map(|k| if c >> k & 1 == 1 { input_box[k].1 } else { input_box[k].0 })
                    .collect();
                m = m.max(sign * (env.eval(&x) - p.eval(&x)));
            }
            m
        })
        .collect()
}

/// Attach one envelope's indicator block to the model and return the index of
/// its output variable `t`.
///
/// For a convex envelope (pointwise max of planes `p_i(x) = w_i.x + v_i`):
/// primal rows `p_i(x) <= t` for all planes, indicator rows
/// `(mu_i - 1) M_i <= p_i(x) - t` so the chosen plane is tight, and
/// `sum_i mu_i = 1`. The concave side mirrors every inequality. Two span rows
/// per input dimension tie the inputs to the winning region of the chosen
/// plane (`x_k` between the mu-weighted region bounds), which keeps the
/// relaxation from drifting into plane/input combinations no integral point
/// can realize.
fn push_envelope_block(
    model: &mut MipModel,
    pipe: usize,
    pipe_id: &str,
    inputs: &[usize],
    env: &Envelope,
    input_box: &[(f64, f64)],
    options: &BuildOptions,
    convex_side: bool,
) -> usize {
    let planes = env.planes();
    let spans = plane_spans(env, input_box);
    let big_m: Vec<f64> = match options.big_m {
        BigMStrategy::Derived => per_plane_big_m(env, input_box),
        BigMStrategy::Fixed(m) => vec![m; planes.len()],
    };
    let (t_lo, t_hi) = term_bounds(env, input_box);
    let (t_name, mu_name, env_name, ind_name, pick_name, span_name) = if convex_side {
        ("tplus", "mu_plus", "env_plus", "ind_plus", "pick_plus", "span_plus")
    } else {
        ("tminus", "mu_minus", "env_minus", "ind_minus", "pick_minus", "span_minus")
    };
    let t_symbol = if convex_side { Symbol::ConvexTerm(pipe) } else { Symbol::ConcaveTerm(pipe) };
    let t = model.push_var(
        format!("{t_name}[{pipe_id}]"),
        t_lo,
        t_hi,
        VarKind::Continuous,
        Some(t_symbol),
        0.0,
    );

    let mus: Vec<usize> = (0..planes.len())
        .map(|i| {
            let sym = if convex_side {
                Symbol::PlaneChoicePlus { pipe, plane: i }
            } else {
                Symbol::PlaneChoiceMinus { pipe, plane: i }
            };
            // Planes that win nowhere on this pipe's box stay unselectable.
            let upper = if spans[i].is_some() { 1.0 } else { 0.0 };
            model.push_var(
                format!("{mu_name}[{pipe_id},{i}]"),
                0.0,
                upper,
                VarKind::Binary,
                Some(sym),
                0.0,
            )
        })
        .collect();

    for (i, plane) in planes.iter().enumerate() {
        let mut base: Vec<(usize, f64)> =
            inputs.iter().zip(plane.slope.iter()).map(|(&j, &w)| (j, w)).collect();
        base.push((t, -1.0));
        base.sort_by_key(|&(j, _)| j);

        // Primal side: the output never falls below (convex) / rises above
        // (concave) any supporting plane.
        let sense = if convex_side { Sense::Le } else { Sense::Ge };
        model.push_row(
            format!("{env_name}[{pipe_id},{i}]"),
            base.clone(),
            sense,
            -plane.intercept,
        );

        // Indicator side: when mu_i = 1 the plane is tight; otherwise the row
        // is slack by at most M_i.
        let mut ind = base;
        if convex_side {
            ind.push((mus[i], -big_m[i]));
            ind.sort_by_key(|&(j, _)| j);
            model.push_row(
                format!("{ind_name}[{pipe_id},{i}]"),
                ind,
                Sense::Ge,
                -plane.intercept - big_m[i],
            );
        } else {
            ind.push((mus[i], big_m[i]));
            ind.sort_by_key(|&(j, _)| j);
            model.push_row(
                format!("{ind_name}[{pipe_id},{i}]"),
                ind,
                Sense::Le,
                -plane.intercept + big_m[i],
            );
        }
    }

    model.push_row(
        format!("{pick_name}[{pipe_id}]"),
        mus.iter().map(|&j| (j, 1.0)).collect(),
        Sense::Eq,
        1.0,
    );

    // Span rows: each input coordinate lies between the mu-weighted bounds of
    // the chosen plane's winning region.
    for (k, &input) in inputs.iter().enumerate() {
        let mut lo_coeffs = vec![(input, 1.0)];
        let mut hi_coeffs = vec![(input, 1.0)];
        for (i, span) in spans.iter().enumerate() {
            if let Some(span) = span {
                lo_coeffs.push((mus[i], -span[k].0));
                hi_coeffs.push((mus[i], -span[k].1));
            }
        }
        lo_coeffs.sort_by_key(|&(j, _)| j);
        hi_coeffs.sort_by_key(|&(j, _)| j);
        model.push_row(format!("{span_name}_lo[{pipe_id},{k}]"), lo_coeffs, Sense::Ge, 0.0);
        model.push_row(format!("{span_name}_hi[{pipe_id},{k}]"), hi_coeffs, Sense::Le, 0.0);
    }
    t
}

/// Build the envelope indicator model for an operational problem: dispatch
/// injections and route flows subject to exact piecewise-linear pressure-drop
/// physics per pipe, `t_plus + t_minus = omega * (pi_from - pi_to)`.
pub fn build_icnn_operational(
    problem: &PlanningProblem,
    envelopes: &[EnvelopePair],
    options: &BuildOptions,
) -> Result<MipModel, CompileError> {
    if problem.mode != Mode::Operational {
        return Err(CompileError::UnsupportedMode {
            formulation: "the operational envelope indicator",
            mode: problem.mode,
        });
    }
    let net = &problem.network;
    if envelopes.len() != net.pipe_count() {
        return Err(CompileError::EnvelopeCount {
            got: envelopes.len(),
            expected: net.pipe_count(),
        });
    }

    let mut model = MipModel { vars: Vec::new(), rows: Vec::new(), objective: Vec::new() };
    let core = push_core(problem, &mut model);

    for (l, pipe) in net.pipelines.iter().enumerate() {
        let input_box = [(pipe.flow_min, pipe.flow_max)];
        let pair = &envelopes[l];
        validate_envelope(&pipe.id, &pair.convex, Orientation::Convex, &input_box, "convex")?;
        validate_envelope(&pipe.id, &pair.concave, Orientation::Concave, &input_box, "concave")?;

        let inputs = [core.flows[l]];
        let tp = push_envelope_block(
            &mut model, l, &pipe.id, &inputs, &pair.convex, &input_box, options, true,
        );
        let tm = push_envelope_block(
            &mut model, l, &pipe.id, &inputs, &pair.concave, &input_box, options, false,
        );

        let (from, to) = net.endpoints(l);
        let mut coeffs = vec![
            (core.pressures[from], -pipe.friction),
            (core.pressures[to], pipe.friction),
            (tp, 1.0),
            (tm, 1.0),
        ];
        coeffs.sort_by_key(|&(j, _)| j);
        model.push_row(format!("couple[{}]", pipe.id), coeffs, Sense::Eq, 0.0);
    }

    Ok(model)
}

/// Build the envelope indicator model for an expansion problem. Diameters are
/// decision variables with linear build cost, the flow terms take `(phi, d)`
/// as inputs (envelopes of `phi |phi| / d` split by sign), and the coupling
/// uses the per-diameter friction: `t_plus + t_minus = omega_hat * (pi_from -
/// pi_to)`.
pub fn build_icnn_expansion(
    problem: &PlanningProblem,
    envelopes: &[EnvelopePair],
    options: &BuildOptions,
) -> Result<MipModel, CompileError> {
    if problem.mode != Mode::Expansion {
        return Err(CompileError::UnsupportedMode {
            formulation: "the expansion envelope indicator",
            mode: problem.mode,
        });
    }
    let net = &problem.network;
    if envelopes.len() != net.pipe_count() {
        return Err(CompileError::EnvelopeCount {
            got: envelopes.len(),
            expected: net.pipe_count(),
        });
    }

    let mut model = MipModel { vars: Vec::new(), rows: Vec::new(), objective: Vec::new() };
    let core = push_core(problem, &mut model);

    for (l, pipe) in net.pipelines.iter().enumerate() {
        let input_box = [(pipe.flow_min, pipe.flow_max), (pipe.d_min(), pipe.d_max())];
        let pair = &envelopes[l];
        validate_envelope(&pipe.id, &pair.convex, Orientation::Convex, &input_box, "convex")?;
        validate_envelope(&pipe.id, &pair.concave, Orientation::Concave, &input_box, "concave")?;

        let d = model.push_var(
            format!("d[{}]", pipe.id),
            pipe.d_min(),
            pipe.d_max(),
            VarKind::Continuous,
            Some(Symbol::Diameter(l)),
            pipe.expansion_cost,
        );

        let inputs = [core.flows[l], d];
        let tp = push_envelope_block(
            &mut model, l, &pipe.id, &inputs, &pair.convex, &input_box, options, true,
        );
        let tm = push_envelope_block(
            &mut model, l, &pipe.id, &inputs, &pair.concave, &input_box, options, false,
        );

        let (from, to) = net.endpoints(l);
        let mut coeffs = vec![
            (core.pressures[from], -pipe.friction_per_diameter),
            (core.pressures[to], pipe.friction_per_diameter),
            (tp, 1.0),
            (tm, 1.0),
        ];
        coeffs.sort_by_key(|&(j, _)| j);
        model.push_row(format!("couple[{}]", pipe.id), coeffs, Sense::Eq, 0.0);
    }

    Ok(model)
}

/// Build the tangent-cut relaxation of an operational problem: per pipe a
/// direction binary `x`, linearized products `z_i = x * pi_i` for both
/// endpoints, and the quadratic pressure-drop inequality
/// `2 z_from - 2 z_to - pi_from + pi_to >= phi^2 / omega` outer-approximated
/// by tangent cuts at a uniform grid of flow points.
pub fn build_miqp_relaxation(
    problem: &PlanningProblem,
    options: &BuildOptions,
) -> Result<MipModel, CompileError> {
    if problem.mode != Mode::Operational {
        return Err(CompileError::UnsupportedMode {
            formulation: "the tangent-cut relaxation",
            mode: problem.mode,
        });
    }
    let cuts = options.tangent_cut_count;
    if cuts < 2 {
        return Err(CompileError::TooFewCuts(cuts));
    }

    let net = &problem.network;
    let mut model = MipModel { vars: Vec::new(), rows: Vec::new(), objective: Vec::new() };
    let core = push_core(problem, &mut model);

    for (l, pipe) in net.pipelines.iter().enumerate() {
        let (from, to) = net.endpoints(l);
        let x = model.push_var(
            format!("x[{}]", pipe.id),
            0.0,
            1.0,
            VarKind::Binary,
            Some(Symbol::FlowDirection(l)),
            0.0,
        );

        // z = x * pi for each endpoint, via the four product-box rows.
        let mut z = [0usize; 2];
        for (slot, &node) in [from, to].iter().enumerate() {
            let nd = &net.nodes[node];
            let (p_lo, p_hi) = (nd.pressure_min, nd.pressure_max);
            let zj = model.push_var(
                format!("z[{},{}]", pipe.id, nd.id),
                0.0,
                p_hi,
                VarKind::Continuous,
                Some(Symbol::PressureProduct { pipe: l, node }),
                0.0,
            );
            z[slot] = zj;
            let pi = core.pressures[node];
            let mk = |t: &str| format!("{}[{},{}]", t, pipe.id, nd.id);
            // z <= pi_max * x
            model.push_row(mk("zx_ub"), sorted(vec![(zj, 1.0), (x, -p_hi)]), Sense::Le, 0.0);
            // z >= pi_min * x
            model.push_row(mk("zx_lb"), sorted(vec![(zj, 1.0), (x, -p_lo)]), Sense::Ge, 0.0);
            // z <= pi - pi_min * (1 - x)
            model.push_row(
                mk("zpi_ub"),
                sorted(vec![(zj, 1.0), (pi, -1.0), (x, -p_lo)]),
                Sense::Le,
                -p_lo,
            );
            // z >= pi - pi_max * (1 - x)
            model.push_row(
                mk("zpi_lb"),
                sorted(vec![(zj, 1.0), (pi, -1.0), (x, -p_hi)]),
                Sense::Ge,
                -p_hi,
            );
        }

        // Tangent cuts to phi^2 at a uniform grid over the flow box,
        // endpoints included: the quadratic row becomes, at each grid point
        // phi_hat,
        //   2 z_from - 2 z_to - pi_from + pi_to - (2 phi_hat / omega) phi
        //     >= -phi_hat^2 / omega.
        let omega = pipe.friction;
        for k in 0..cuts {
            let frac = k as f64 / (cuts - 1) as f64;
            let phi_hat = pipe.flow_min + frac * (pipe.flow_max - pipe.flow_min);
            let coeffs = sorted(vec![
                (z[0], 2.0),
                (z[1], -2.0),
                (core.pressures[from], -1.0),
                (core.pressures[to], 1.0),
                (core.flows[l], -2.0 * phi_hat / omega),
            ]);
            model.push_row(
                format!("cut[{},{}]", pipe.id, k),
                coeffs,
                Sense::Ge,
                -phi_hat * phi_hat / omega,
            );
        }
    }

    Ok(model)
}

fn sorted(mut coeffs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    coeffs.sort_by_key(|&(j, _)| j);
    coeffs
}
