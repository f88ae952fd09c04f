//! Sign-constrained ReLU networks and their exact hyperplane envelopes.
//!
//! The signed flow term `phi*|phi|` splits into a convex part `max(0,phi)^2`
//! and a concave part `-max(0,-phi)^2` (diameter-normalized variants divide
//! by d). Each part is approximated by a one-hidden-layer ReLU network whose
//! sign structure certifies curvature: for a convex net every layer past the
//! first has non-negative weights; for a concave net the last layer is
//! non-positive instead. Hidden activations are `max(0,.)`. The output layer
//! is clamped toward the target's sign: `max(0,.)` for convex nets and
//! `min(0,.)` for concave nets, so the clamp is inactive wherever the
//! fitted value has the target's sign and the output unit's activation bit
//! folds into pattern enumeration (an inactive output collapses the whole
//! pattern to the zero hyperplane). A plain `max(0,.)` output on the concave
//! net would pin it to non-negative values and make the concave part
//! unrepresentable.
//!
//! Because every unit is piecewise-linear, the network restricted to one
//! activation pattern `s` is a single affine function; masking each layer's
//! rows by its pattern bits and composing gives the hyperplane
//! `w.x + v` for that pattern. Enumerating patterns and keeping the planes
//! that actually attain the pointwise max (convex) or min (concave) over the
//! training box yields an exact envelope representation of the network.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hidden-layer width cap: envelope sizes stay tractable below it.
pub const MAX_HIDDEN: usize = 15;
/// Pattern enumeration cap on total hidden neurons.
pub const MAX_PATTERN_NEURONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Convex,
    Concave,
}

/// Which flow-term component a network approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `max(0, phi)^2` on a flow interval.
    ConvexPart,
    /// `-max(0, -phi)^2` on a flow interval.
    ConcavePart,
    /// `max(0, phi)^2 / d` on a (flow, diameter) box.
    DynConvex,
    /// `-max(0, -phi)^2 / d` on a (flow, diameter) box.
    DynConcave,
}

impl TargetKind {
    pub fn input_dim(self) -> usize {
        match self {
            TargetKind::ConvexPart | TargetKind::ConcavePart => 1,
            TargetKind::DynConvex | TargetKind::DynConcave => 2,
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            TargetKind::ConvexPart | TargetKind::DynConvex => Orientation::Convex,
            TargetKind::ConcavePart | TargetKind::DynConcave => Orientation::Concave,
        }
    }

    /// Exact target value.
    pub fn eval(self, x: &[f64]) -> f64 {
        let phi = x[0];
        match self {
            TargetKind::ConvexPart => phi.max(0.0).powi(2),
            TargetKind::ConcavePart => -(-phi).max(0.0).powi(2),
            TargetKind::DynConvex => phi.max(0.0).powi(2) / x[1],
            TargetKind::DynConcave => -(-phi).max(0.0).powi(2) / x[1],
        }
    }
}

/// One dense layer: `weights[row][col]`, one bias per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.weights.len()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

/// Training provenance kept with a serialized net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub target: TargetKind,
}

/// A sign-constrained ReLU network with scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluNet {
    pub orientation: Orientation,
    pub input_dim: usize,
    pub layers: Vec<Layer>,
    /// Training box, one (lo, hi) per input.
    pub domain: Vec<(f64, f64)>,
    pub meta: TrainMeta,
}

#[derive(Debug, Error)]
pub enum IcnnError {
    #[error("input dimension mismatch: net expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("hidden size {0} exceeds the supported maximum {MAX_HIDDEN}")]
    TooManyHidden(usize),
    #[error("pattern enumeration supports at most {MAX_PATTERN_NEURONS} hidden neurons, net has {0}")]
    PatternLimit(usize),
    #[error("training diverged: loss = {0}")]
    TrainDiverged(f64),
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

impl ReluNet {
    /// Total hidden neuron count (output unit excluded).
    pub fn hidden_count(&self) -> usize {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.out_dim()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), IcnnError> {
        if x.len() != self.input_dim {
            return Err(IcnnError::Dimension { expected: self.input_dim, got: x.len() });
        }
        Ok(())
    }

    /// Output clamp: toward the sign the orientation can represent.
    fn clamp_output(&self, pre: f64) -> f64 {
        match self.orientation {
            Orientation::Convex => pre.max(0.0),
            Orientation::Concave => pre.min(0.0),
        }
    }

    /// Evaluate the network. Convex orientation yields a convex function of
    /// the input, concave yields a concave one (guaranteed by the weight
    /// sign constraints kept by [`ReluNet::project_weights`]).
    pub fn forward(&self, x: &[f64]) -> Result<f64, IcnnError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let pre = layer.affine(&h);
            if idx == last {
                debug_assert_eq!(pre.len(), 1, "scalar output");
                return Ok(self.clamp_output(pre[0]));
            }
            h = pre.into_iter().map(|v| v.max(0.0)).collect();
        }
        unreachable!("network has at least one layer")
    }

    /// Clamp weights onto the orientation's sign cone. Idempotent.
    ///
    /// Convex: all layers past the first must be element-wise non-negative.
    /// Concave: layers past the first are non-negative except the last,
    /// which must be non-positive.
    pub fn project_weights(&mut self) {
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            if idx == 0 {
                continue; // first layer is unconstrained
            }
            let flip = idx == last && self.orientation == Orientation::Concave;
            for row in &mut layer.weights {
                for w in row {
                    if flip {
                        if *w > 0.0 {
                            *w = 0.0;
                        }
                    } else if *w < 0.0 {
                        *w = 0.0;
                    }
                }
            }
        }
    }

    /// Activation bits at `x`: one bit per hidden neuron (layer by layer)
    /// plus the output unit's bit last. The output bit records whether the
    /// clamp passes the affine branch through.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Pattern, IcnnError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut bits: u32 = 0;
        let mut pos = 0u8;
        let mut h = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let pre = layer.affine(&h);
            if idx == last {
                let active = match self.orientation {
                    Orientation::Convex => pre[0] > 0.0,
                    Orientation::Concave => pre[0] < 0.0,
                };
                if active {
                    bits |= 1 << pos;
                }
                pos += 1;
            } else {
                h = pre
                    .into_iter()
                    .map(|v| {
                        if v > 0.0 {
                            bits |= 1 << pos;
                            pos += 1;
                            v
                        } else {
                            pos += 1;
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(Pattern { bits, len: pos })
    }

    /// The affine function the net computes under a fixed activation pattern:
    /// mask each layer's rows by its bits and compose.
    pub fn plane_for_pattern(&self, pattern: &Pattern) -> Result<Hyperplane, IcnnError> {
        let total: usize = self.hidden_count() + 1;
        if pattern.len as usize != total {
            return Err(IcnnError::Dimension { expected: total, got: pattern.len as usize });
        }
        let mut offset = 0usize;
        // Running affine map from input to the current layer's masked output.
        let mut slope: Vec<Vec<f64>> = (0..self.input_dim)
            .map(|i| {
                let mut e = vec![0.0; self.input_dim];
                e[i] = 1.0;
                e
            })
            .collect(); // identity, row r = d(out_r)/d(x)
        let mut intercept: Vec<f64> = vec![0.0; self.input_dim];
        for layer in &self.layers {
            let rows = layer.out_dim();
            let mut new_slope = vec![vec![0.0; self.input_dim]; rows];
            let mut new_intercept = vec![0.0; rows];
            for r in 0..rows {
                let active = pattern.get(offset + r);
                if active {
                    for (c, wrc) in layer.weights[r].iter().enumerate() {
                        for k in 0..self.input_dim {
                            new_slope[r][k] += wrc * slope[c][k];
                        }
                        new_intercept[r] += wrc * intercept[c];
                    }
                    new_intercept[r] += layer.bias[r];
                }
            }
            slope = new_slope;
            intercept = new_intercept;
            offset += rows;
        }
        Ok(Hyperplane { slope: slope[0].clone(), intercept: intercept[0], pattern: pattern.clone() })
    }
}

/// Packed activation pattern: bit i = neuron i active (hidden neurons layer
/// by layer, output unit last). Length equals the total neuron count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub bits: u32,
    pub len: u8,
}

impl Pattern {
    pub fn get(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len as usize).map(|i| self.get(i)).collect()
    }
}

/// An affine piece `y = slope . x + intercept` tagged with its pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub slope: Vec<f64>,
    pub intercept: f64,
    pub pattern: Pattern,
}

impl Hyperplane {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.slope.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.intercept
    }
}

/// Enumerate one hyperplane per hidden activation pattern (output unit
/// active), in ascending binary order of the hidden bits, then append the
/// zero hyperplane for the inactive-output patterns if no enumerated plane
/// already equals it. Requires at most [`MAX_PATTERN_NEURONS`] hidden units.
pub fn enumerate_hyperplanes(net: &ReluNet) -> Result<Vec<Hyperplane>, IcnnError> {
    let p = net.hidden_count();
    if p > MAX_PATTERN_NEURONS {
        return Err(IcnnError::PatternLimit(p));
    }
    let total = p + 1;
    let mut planes = Vec::with_capacity(1 << p);
    for mask in 0u32..(1u32 << p) {
        let pattern = Pattern { bits: mask | 1 << p, len: total as u8 };
        planes.push(net.plane_for_pattern(&pattern)?);
    }
    let zero_present = planes
        .iter()
        .any(|pl| pl.intercept == 0.0 && pl.slope.iter().all(|&w| w == 0.0));
    if !zero_present {
        planes.push(Hyperplane {
            slope: vec![0.0; net.input_dim],
            intercept: 0.0,
            pattern: Pattern { bits: 0, len: total as u8 },
        });
    }
    Ok(planes)
}

/// The supporting subset of a plane family over a box, with witness points.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    orientation: Orientation,
    domain: Vec<(f64, f64)>,
    planes: Vec<Hyperplane>,
    /// One point per kept plane where that plane strictly attains the envelope.
    witnesses: Vec<Vec<f64>>,
}

impl Envelope {
    /// Assemble an envelope from parts without screening (trusted input for
    /// tests and tooling; planes must already be supporting).
    pub fn from_parts(
        orientation: Orientation,
        domain: Vec<(f64, f64)>,
        planes: Vec<Hyperplane>,
        witnesses: Vec<Vec<f64>>,
    ) -> Self {
        Envelope { orientation, domain, planes, witnesses }
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn planes(&self) -> &[Hyperplane] {
        &self.planes
    }

    pub fn witnesses(&self) -> &[Vec<f64>] {
        &self.witnesses
    }

    pub fn input_dim(&self) -> usize {
        self.domain.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.domain.len()
            && x.iter()
                .zip(&self.domain)
                .all(|(xi, (lo, hi))| *xi >= *lo && *xi <= *hi)
    }

    /// Pointwise max (convex) or min (concave) over the kept planes.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let vals = self.planes.iter().map(|p| p.eval(x));
        match self.orientation {
            Orientation::Convex => vals.fold(f64::NEG_INFINITY, f64::max),
            Orientation::Concave => vals.fold(f64::INFINITY, f64::min),
        }
    }

    /// Evaluate and flag extrapolation: outside the domain the value is still
    /// returned but `in_domain` is false.
    pub fn eval_checked(&self, x: &[f64]) -> (f64, bool) {
        (self.eval(x), self.contains(x))
    }
}

/// Free-function form of [`Envelope::eval_checked`].
pub fn envelope_eval(envelope: &Envelope, x: &[f64]) -> (f64, bool) {
    envelope.eval_checked(x)
}

/// Keep exactly the planes that strictly attain the upper (convex) or lower
/// (concave) envelope somewhere on the box, with a witness point each.
///
/// Scalar inputs use the exact sorted-by-slope sweep (equal slopes keep the
/// first after sorting by descending effective intercept; a plane active only
/// at a single tie point is dominated and dropped). Two-dimensional inputs
/// use per-plane feasibility LPs over the box after sound prefilters.
pub fn screen_supporting(
    planes: &[Hyperplane],
    orientation: Orientation,
    domain: &[(f64, f64)],
) -> Envelope {
    // Work in "upper envelope" space: negate concave families.
    let negate = orientation == Orientation::Concave;
    let eff: Vec<Hyperplane> = planes
        .iter()
        .map(|p| {
            if negate {
                Hyperplane {
                    slope: p.slope.iter().map(|w| -w).collect(),
                    intercept: -p.intercept,
                    pattern: p.pattern.clone(),
                }
            } else {
                p.clone()
            }
        })
        .collect();

    // Drop exact duplicates, keeping the first occurrence.
    let mut uniq: Vec<usize> = Vec::new();
    for (i, p) in eff.iter().enumerate() {
        if !uniq.iter().any(|&j| eff[j].slope == p.slope && eff[j].intercept == p.intercept) {
            uniq.push(i);
        }
    }

    let (kept, witnesses) = match domain.len() {
        1 => screen_1d(&eff, &uniq, domain[0]),
        _ => screen_nd(&eff, &uniq, domain),
    };

    let out_planes: Vec<Hyperplane> = kept.iter().map(|&i| planes[i].clone()).collect();
    Envelope {
        orientation,
        domain: domain.to_vec(),
        planes: out_planes,
        witnesses,
    }
}

/// Exact 1-D upper envelope: sort by slope, sweep computing the x where each
/// line takes over, drop lines whose winning interval misses the domain
/// interior. Returns kept original indices (in activation order, left to
/// right) and interval-midpoint witnesses.
fn screen_1d(eff: &[Hyperplane], uniq: &[usize], (lo, hi): (f64, f64)) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut order: Vec<usize> = uniq.to_vec();
    // Slope ascending; among equal slopes highest intercept first so the
    // sweep keeps it (duplicates were already removed).
    order.sort_by(|&a, &b| {
        eff[a].slope[0]
            .total_cmp(&eff[b].slope[0])
            .then(eff[b].intercept.total_cmp(&eff[a].intercept))
            .then(a.cmp(&b))
    });
    // Equal-slope lines after the first can never win: strip them now.
    let mut lines: Vec<usize> = Vec::new();
    for &i in &order {
        if let Some(&last) = lines.last() {
            if eff[last].slope[0] == eff[i].slope[0] {
                continue;
            }
        }
        lines.push(i);
    }

    // Sweep: stack of (index, start_x of its winning interval).
    let cross = |a: usize, b: usize| -> f64 {
        // x where line b overtakes line a (slope_b > slope_a).
        (eff[a].intercept - eff[b].intercept) / (eff[b].slope[0] - eff[a].slope[0])
    };
    let mut stack: Vec<(usize, f64)> = Vec::new();
    for &i in &lines {
        let mut start = f64::NEG_INFINITY;
        while let Some(&(top, top_start)) = stack.last() {
            let x = cross(top, i);
            if x <= top_start {
                stack.pop();
            } else {
                start = x;
                break;
            }
        }
        if stack.is_empty() {
            start = f64::NEG_INFINITY;
        }
        stack.push((i, start));
    }

    let mut kept = Vec::new();
    let mut witnesses = Vec::new();
    for (pos, &(i, start)) in stack.iter().enumerate() {
        let end = stack.get(pos + 1).map(|&(_, s)| s).unwrap_or(f64::INFINITY);
        // Winning interval must overlap the domain with positive length.
        if end > lo && start < hi {
            let a = start.max(lo);
            let b = end.min(hi);
            if b > a {
                kept.push(i);
                witnesses.push(vec![0.5 * (a + b)]);
            }
        }
    }
    (kept, witnesses)
}

/// Box-domain screening for multi-dimensional inputs: grid argmax marks
/// definite keeps, single-plane corner dominance soundly discards bulk, and
/// a per-plane LP (maximize the margin over all other survivors) decides the
/// rest. A plane is kept only when its maximal margin is strictly positive,
/// so every kept plane has a witness where removing it changes the envelope.
fn screen_nd(eff: &[Hyperplane], uniq: &[usize], domain: &[(f64, f64)]) -> (Vec<usize>, Vec<Vec<f64>>) {
    use crate::solve::{solve_lp, LpOutcome, LpProblem, LpRow, RowSense};

    let dim = domain.len();
    if uniq.len() == 1 {
        let center: Vec<f64> = domain.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        return (vec![uniq[0]], vec![center]);
    }

    // Corner-dominance prefilter: drop planes lying weakly below another
    // plane at every corner (affine gaps attain extremes at corners).
    let corners: Vec<Vec<f64>> = (0..1usize << dim)
        .map(|c| {
            (0..dim)
                .map(|k| if c >> k & 1 == 1 { domain[k].1 } else { domain[k].0 })
                .collect()
        })
        .collect();
    let corner_vals: Vec<Vec<f64>> = uniq
        .iter()
        .map(|&i| corners.iter().map(|x| eff[i].eval(x)).collect())
        .collect();
    let mut alive: Vec<bool> = vec![true; uniq.len()];
    for a in 0..uniq.len() {
        for b in 0..uniq.len() {
            if a == b {
                continue;
            }
            // b dominates a when b >= a at every corner (distinct planes).
            if corner_vals[b].iter().zip(&corner_vals[a]).all(|(vb, va)| vb >= va) {
                alive[a] = false;
                break;
            }
        }
    }
    let candidates: Vec<usize> = (0..uniq.len()).filter(|&k| alive[k]).collect();

    // Margin bound for the LP epsilon variable.
    let mut gap: f64 = 1.0;
    for vals in &corner_vals {
        for (va, vb) in vals.iter().zip(corner_vals.iter().flatten()) {
            gap = gap.max((va - vb).abs());
        }
    }

    // Exact pass, highest index first so the earliest of tied planes survives.
    let mut keep = vec![true; candidates.len()];
    let mut witness: Vec<Option<Vec<f64>>> = vec![None; candidates.len()];
    for pos in (0..candidates.len()).rev() {
        let j = uniq[candidates[pos]];
        // max eps s.t. plane_j(x) >= plane_i(x) + eps for all other survivors.
        let mut rows = Vec::new();
        for (q, &cand) in candidates.iter().enumerate() {
            if q == pos || !keep[q] {
                continue;
            }
            let i = uniq[cand];
            let mut coeffs: Vec<(usize, f64)> = (0..dim)
                .map(|k| (k, eff[j].slope[k] - eff[i].slope[k]))
                .collect();
            coeffs.push((dim, -1.0));
            rows.push(LpRow {
                coeffs,
                sense: RowSense::Ge,
                rhs: eff[i].intercept - eff[j].intercept,
            });
        }
        if rows.is_empty() {
            // Sole survivor: keep with the box center as witness.
            witness[pos] = Some(domain.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
            continue;
        }
        let mut lower: Vec<f64> = domain.iter().map(|d| d.0).collect();
        let mut upper: Vec<f64> = domain.iter().map(|d| d.1).collect();
        lower.push(-gap - 1.0);
        upper.push(gap + 1.0);
        let mut objective = vec![0.0; dim + 1];
        objective[dim] = -1.0; // maximize eps
        let lp = LpProblem { lower, upper, objective, rows };
        match solve_lp(&lp) {
            Ok(LpOutcome::Optimal(sol)) => {
                let eps = sol.x[dim];
                if eps > 1e-12 {
                    witness[pos] = Some(sol.x[..dim].to_vec());
                } else {
                    keep[pos] = false;
                }
            }
            _ => {
                // The screening LP is bounded and feasible by construction;
                // treat anything else as "not supporting".
                keep[pos] = false;
            }
        }
    }

    let mut kept = Vec::new();
    let mut witnesses = Vec::new();
    for (pos, &cand) in candidates.iter().enumerate() {
        if keep[pos] {
            kept.push(uniq[cand]);
            witnesses.push(witness[pos].clone().expect("kept planes carry a witness"));
        }
    }
    (kept, witnesses)
}

/// Configuration for [`train_pair`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Training box, one (lo, hi) per target input.
    pub domain: Vec<(f64, f64)>,
    /// Hidden-layer width (1..=15).
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Uniform-grid sample budget over the box.
    pub sample_count: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(domain: Vec<(f64, f64)>) -> Self {
        TrainConfig {
            domain,
            hidden: 12,
            epochs: 300,
            learning_rate: 0.02,
            sample_count: 512,
            seed: 7,
        }
    }
}

/// Train one network of the pair for `target` on a uniform grid sample of the
/// exact flow term, by full-batch projected gradient descent from a
/// breakpoint-interpolation initializer. Deterministic given the seed; the
/// MSE-best iterate is returned.
pub fn train_pair(target: TargetKind, cfg: &TrainConfig) -> Result<ReluNet, IcnnError> {
    let dim = target.input_dim();
    if cfg.domain.len() != dim {
        return Err(IcnnError::BadConfig(format!(
            "domain has {} intervals, target needs {dim}",
            cfg.domain.len()
        )));
    }
    if cfg.hidden == 0 || cfg.hidden > MAX_HIDDEN {
        return Err(IcnnError::TooManyHidden(cfg.hidden));
    }
    for &(lo, hi) in &cfg.domain {
        if !(lo < hi) {
            return Err(IcnnError::BadConfig(format!("empty domain interval [{lo}, {hi}]")));
        }
    }
    if dim == 2 && cfg.domain[1].0 <= 0.0 {
        return Err(IcnnError::BadConfig("diameter interval must be positive".to_string()));
    }
    if cfg.sample_count < 2 {
        return Err(IcnnError::BadConfig("sample_count must be at least 2".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Uniform grid samples (original coordinates).
    let samples: Vec<Vec<f64>> = match dim {
        1 => {
            let (lo, hi) = cfg.domain[0];
            (0..cfg.sample_count)
                .map(|k| vec![lo + (hi - lo) * k as f64 / (cfg.sample_count - 1) as f64])
                .collect()
        }
        _ => {
            let side = (cfg.sample_count as f64).sqrt().ceil() as usize;
            let side = side.max(2);
            let mut pts = Vec::with_capacity(side * side);
            for a in 0..side {
                for b in 0..side {
                    let x = cfg.domain[0].0
                        + (cfg.domain[0].1 - cfg.domain[0].0) * a as f64 / (side - 1) as f64;
                    let d = cfg.domain[1].0
                        + (cfg.domain[1].1 - cfg.domain[1].0) * b as f64 / (side - 1) as f64;
                    pts.push(vec![x, d]);
                }
            }
            pts
        }
    };
    let targets: Vec<f64> = samples.iter().map(|x| target.eval(x)).collect();

    // Input scaling to [-1, 1] and output scaling to about unit magnitude.
    let mid: Vec<f64> = cfg.domain.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let half: Vec<f64> = cfg.domain.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect();
    let yscale = targets.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(1e-9);

    let mut net = init_net(target, cfg, &mut rng);
    // Move the constructed net into scaled coordinates for descent:
    // x = mid + half*x_hat  =>  W0_hat = W0*diag(half), b0_hat = b0 + W0*mid;
    // y_hat = y/yscale      =>  last layer divided by yscale.
    {
        let Layer { weights, bias } = &mut net.layers[0];
        for (row, b) in weights.iter_mut().zip(bias.iter_mut()) {
            let mut shift = 0.0;
            for (k, w) in row.iter_mut().enumerate() {
                shift += *w * mid[k];
                *w *= half[k];
            }
            *b += shift;
        }
    }
    {
        let last = net.layers.len() - 1;
        for row in &mut net.layers[last].weights {
            for w in row {
                *w /= yscale;
            }
        }
        for b in &mut net.layers[last].bias {
            *b /= yscale;
        }
    }
    net.project_weights();

    let scaled_samples: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| x.iter().zip(&mid).zip(&half).map(|((xi, m), h)| (xi - m) / h).collect())
        .collect();
    let scaled_targets: Vec<f64> = targets.iter().map(|t| t / yscale).collect();

    let loss = descend(&mut net, &scaled_samples, &scaled_targets, cfg)?;

    // Fold the scalings back so the stored net works in original units.
    {
        let Layer { weights, bias } = &mut net.layers[0];
        for (row, b) in weights.iter_mut().zip(bias.iter_mut()) {
            let mut shift = 0.0;
            for (k, w) in row.iter_mut().enumerate() {
                *w /= half[k];
                shift += *w * mid[k];
            }
            *b -= shift;
        }
    }
    {
        let last = net.layers.len() - 1;
        for row in &mut net.layers[last].weights {
            for w in row {
                *w *= yscale;
            }
        }
        for b in &mut net.layers[last].bias {
            *b *= yscale;
        }
    }

    net.domain = cfg.domain.clone();
    net.meta = TrainMeta { seed: cfg.seed, epochs: cfg.epochs, final_loss: loss, target };
    Ok(net)
}

/// Breakpoint-interpolation initializer in original coordinates.
///
/// Scalar targets get the exact piecewise-linear interpolant of the target on
/// jittered knots, written as a sum of ReLU ridges with sign-feasible output
/// weights. Diameter-normalized targets exploit positive homogeneity:
/// tangent-ratio ridges `max(0, phi - s*d)` telescope into the pointwise max
/// of tangent planes of `phi^2/d`.
fn init_net(target: TargetKind, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> ReluNet {
    let h = cfg.hidden;
    let orientation = target.orientation();
    let (w0, b0, w1): (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);
    let b1: f64;
    match target {
        TargetKind::ConvexPart | TargetKind::ConcavePart => {
            let (lo, hi) = cfg.domain[0];
            let span = hi - lo;
            let pad = 0.01 * span;
            // Jittered interior knots, kept sorted.
            let mut knots: Vec<f64> = (0..=h)
                .map(|i| {
                    let base = lo + span * i as f64 / h as f64;
                    if i == 0 || i == h {
                        base
                    } else {
                        base + (rng.random::<f64>() - 0.5) * 0.1 * span / h as f64
                    }
                })
                .collect();
            knots.sort_by(f64::total_cmp);
            let value = |x: f64| target.eval(&[x]);
            let slopes: Vec<f64> = (0..h)
                .map(|i| (value(knots[i + 1]) - value(knots[i])) / (knots[i + 1] - knots[i]))
                .collect();
            match target {
                TargetKind::ConvexPart => {
                    // Ridges opening rightward; increments are non-negative
                    // because secant slopes of a convex function increase.
                    let rows = vec![vec![1.0]; h];
                    let mut bias = vec![0.0; h];
                    let mut out = vec![0.0; h];
                    bias[0] = -(lo - pad);
                    out[0] = slopes[0];
                    for i in 1..h {
                        bias[i] = -knots[i];
                        out[i] = slopes[i] - slopes[i - 1];
                    }
                    b1 = value(lo) - slopes[0] * pad;
                    (w0, b0, w1) = (rows, bias, out);
                }
                _ => {
                    // Concave mirror: ridges opening leftward, non-positive
                    // output weights (secant slopes decrease).
                    let rows = vec![vec![-1.0]; h];
                    let mut bias = vec![0.0; h];
                    let mut out = vec![0.0; h];
                    bias[0] = hi + pad;
                    out[0] = -slopes[h - 1];
                    for i in 0..h - 1 {
                        bias[i + 1] = knots[i + 1];
                        out[i + 1] = -(slopes[i] - slopes[i + 1]);
                    }
                    b1 = value(hi) + slopes[h - 1] * pad;
                    (w0, b0, w1) = (rows, bias, out);
                }
            }
        }
        TargetKind::DynConvex | TargetKind::DynConcave => {
            let (phi_lo, phi_hi) = cfg.domain[0];
            let (d_lo, _d_hi) = cfg.domain[1];
            let reach = match target {
                TargetKind::DynConvex => phi_hi.max(0.0),
                _ => (-phi_lo).max(0.0),
            };
            let rmax = (reach / d_lo).max(1e-6);
            let mut ratios: Vec<f64> = (0..=h)
                .map(|i| {
                    let base = rmax * i as f64 / h as f64;
                    if i == 0 || i == h {
                        base
                    } else {
                        base + (rng.random::<f64>() - 0.5) * 0.1 * rmax / h as f64
                    }
                })
                .collect();
            ratios.sort_by(f64::total_cmp);
            let sgn = if target == TargetKind::DynConvex { 1.0 } else { -1.0 };
            let mut rows = Vec::with_capacity(h);
            let bias = vec![0.0; h];
            let mut out = Vec::with_capacity(h);
            for i in 1..=h {
                let mid_ratio = 0.5 * (ratios[i] + ratios[i - 1]);
                rows.push(vec![sgn, -mid_ratio]);
                out.push(sgn * 2.0 * (ratios[i] - ratios[i - 1]));
            }
            b1 = 0.0;
            (w0, b0, w1) = (rows, bias, out);
        }
    }
    ReluNet {
        orientation,
        input_dim: target.input_dim(),
        layers: vec![
            Layer { weights: w0, bias: b0 },
            Layer { weights: vec![w1], bias: vec![b1] },
        ],
        domain: cfg.domain.clone(),
        meta: TrainMeta { seed: cfg.seed, epochs: 0, final_loss: f64::NAN, target },
    }
}

/// Full-batch projected gradient descent on MSE; returns the best loss seen
/// and leaves the net at the matching iterate.
fn descend(
    net: &mut ReluNet,
    xs: &[Vec<f64>],
    ys: &[f64],
    cfg: &TrainConfig,
) -> Result<f64, IcnnError> {
    let n = xs.len() as f64;
    let hidden = net.layers[0].out_dim();
    let dim = net.input_dim;

    let mse = |net: &ReluNet| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                let o = net.forward(x).expect("dims fixed");
                (o - y) * (o - y)
            })
            .sum::<f64>()
            / n
    };

    let mut best = net.clone();
    let mut best_loss = mse(net);

    for _ in 0..cfg.epochs {
        let mut gw0 = vec![vec![0.0; dim]; hidden];
        let mut gb0 = vec![0.0; hidden];
        let mut gw1 = vec![0.0; hidden];
        let mut gb1 = 0.0;

        for (x, y) in xs.iter().zip(ys) {
            let pre_h = net.layers[0].affine(x);
            let hvec: Vec<f64> = pre_h.iter().map(|v| v.max(0.0)).collect();
            let pre_o = net.layers[1].affine(&hvec)[0];
            let o = net.clamp_output(pre_o);
            let pass = match net.orientation {
                Orientation::Convex => pre_o > 0.0,
                Orientation::Concave => pre_o < 0.0,
            };
            if !pass {
                continue; // clamped flat: zero gradient
            }
            let g = 2.0 * (o - y) / n;
            for r in 0..hidden {
                gw1[r] += g * hvec[r];
            }
            gb1 += g;
            for r in 0..hidden {
                if pre_h[r] > 0.0 {
                    let gh = g * net.layers[1].weights[0][r];
                    for k in 0..dim {
                        gw0[r][k] += gh * x[k];
                    }
                    gb0[r] += gh;
                }
            }
        }

        for r in 0..hidden {
            for k in 0..dim {
                net.layers[0].weights[r][k] -= cfg.learning_rate * gw0[r][k];
            }
            net.layers[0].bias[r] -= cfg.learning_rate * gb0[r];
            net.layers[1].weights[0][r] -= cfg.learning_rate * gw1[r];
        }
        net.layers[1].bias[0] -= cfg.learning_rate * gb1;
        net.project_weights();

        let loss = mse(net);
        if !loss.is_finite() {
            return Err(IcnnError::TrainDiverged(loss));
        }
        if loss < best_loss {
            best_loss = loss;
            best = net.clone();
        }
    }

    *net = best;
    Ok(best_loss)
}

/// Serialize a trained net to its JSON document form.
pub fn net_to_json(net: &ReluNet) -> String {
    serde_json::to_string_pretty(net).expect("nets always serialize")
}

/// Parse a net from its JSON document form.
pub fn net_from_json(text: &str) -> Result<ReluNet, serde_json::Error> {
    serde_json::from_str(text)
}
