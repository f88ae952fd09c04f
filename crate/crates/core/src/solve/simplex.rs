//! Dense bounded-variable primal simplex.
//!
//! Variables carry individual (possibly infinite) bounds; every row gets a
//! slack so the working matrix is `[A | I]` and the all-slack basis is always
//! available. Infeasibility of the starting point is driven out by a
//! composite phase-1 objective (sum of bound violations of basic variables),
//! re-priced every iteration, so the code path is a single loop that becomes
//! the ordinary phase-2 simplex as soon as the basis is feasible. Dantzig
//! pricing with a Bland fallback after a degenerate streak guards against
//! cycling. The final answer is recomputed from a fresh LU factorization of
//! the basis, which also produces row duals.

use super::{LpOptimal, LpOutcome, LpProblem, LpRow, RowSense, SolveError};
use nalgebra::{DMatrix, DVector};

/// Bound violations below this are treated as feasible.
const FEAS_TOL: f64 = 1e-9;
/// Reduced costs below this magnitude cannot enter.
const COST_TOL: f64 = 1e-9;
/// Columns with smaller magnitude are skipped in the ratio test. Leaving a
/// tiny-coefficient row unblocked displaces its basic variable by at most
/// step times this, which phase 1 prices out if it ever matters; admitting it
/// as a pivot would inject its reciprocal into the tableau.
const PIVOT_SKIP: f64 = 1e-9;
/// Bound displacement tolerated to trade a near-minimal-ratio pivot for a
/// larger pivot element (two-pass ratio test).
const HARRIS_SLACK: f64 = 1e-7;
/// Steps below this count as degenerate for the anti-cycling streak.
const DEGENERATE_STEP: f64 = 1e-12;
/// Consecutive degenerate pivots before switching to Bland's rule.
const BLAND_TRIGGER: usize = 40;
/// Residual infeasibility accepted when phase 1 stalls.
const INFEAS_ACCEPT: f64 = 1e-7;
/// Basis changes between LU refactorizations of the dense tableau.
const REFACTOR_EVERY: usize = 200;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Free variable resting at zero.
    FreeZero,
}

/// Solve `min c.x` subject to the rows and variable bounds of `problem`.
pub fn solve_lp(problem: &LpProblem) -> Result<LpOutcome, SolveError> {
    validate(problem)?;
    let n = problem.objective.len();
    for j in 0..n {
        if problem.lower[j] > problem.upper[j] {
            return Ok(LpOutcome::Infeasible);
        }
    }
    if problem.rows.is_empty() {
        return solve_boxed(problem);
    }
    let scaling = Scaling::equilibrate(problem);
    let scaled = scaling.apply(problem);
    let outcome = Simplex::new(&scaled).run()?;
    Ok(scaling.unapply(outcome))
}

/// Geometric-mean row/column equilibration with power-of-two scale factors.
///
/// Models that mix big-M constants, physical coefficients, and
/// per-diameter slopes span many orders of magnitude, which breaks dense
/// elimination; equilibration pulls every row and column toward unit
/// magnitude. Powers of two keep the scaled coefficients exactly
/// representable, so scaling introduces no rounding of its own and the
/// unscaled answer is recovered exactly.
struct Scaling {
    /// Row multipliers `r_i` (power of two).
    row: Vec<f64>,
    /// Column multipliers `c_j` (power of two): scaled variable
    /// `x'_j = x_j / c_j`.
    col: Vec<f64>,
}

impl Scaling {
    /// Round a positive scale to the nearest power of two.
    fn pow2(s: f64) -> f64 {
        if !(s.is_finite() && s > 0.0) {
            return 1.0;
        }
        f64::exp2(s.log2().round())
    }

    fn equilibrate(problem: &LpProblem) -> Scaling {
        let n = problem.objective.len();
        let m = problem.rows.len();
        let mut row = vec![1.0f64; m];
        let mut col = vec![1.0f64; n];
        // A few alternating geometric-mean passes are enough to flatten the
        // magnitude profile; the factors converge quickly.
        for _ in 0..3 {
            for (i, r) in problem.rows.iter().enumerate() {
                let mut lo = f64::INFINITY;
                let mut hi = 0.0f64;
                for &(j, a) in &r.coeffs {
                    let v = (a * row[i] * col[j]).abs();
                    if v > 0.0 {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if hi > 0.0 {
                    row[i] *= Self::pow2(1.0 / (lo * hi).sqrt());
                }
            }
            let mut lo = vec![f64::INFINITY; n];
            let mut hi = vec![0.0f64; n];
            for (i, r) in problem.rows.iter().enumerate() {
                for &(j, a) in &r.coeffs {
                    let v = (a * row[i] * col[j]).abs();
                    if v > 0.0 {
                        lo[j] = lo[j].min(v);
                        hi[j] = hi[j].max(v);
                    }
                }
            }
            for j in 0..n {
                if hi[j] > 0.0 {
                    col[j] *= Self::pow2(1.0 / (lo[j] * hi[j]).sqrt());
                }
            }
        }
        Scaling { row, col }
    }

    fn apply(&self, problem: &LpProblem) -> LpProblem {
        let rows = problem
            .rows
            .iter()
            .zip(&self.row)
            .map(|(r, &ri)| LpRow {
                coeffs: r.coeffs.iter().map(|&(j, a)| (j, a * ri * self.col[j])).collect(),
                sense: r.sense,
                rhs: r.rhs * ri,
            })
            .collect();
        LpProblem {
            // x' = x / c, so boxes divide and costs multiply; the objective
            // value c'.x' = c.x is unchanged.
            lower: problem.lower.iter().zip(&self.col).map(|(&b, &c)| b / c).collect(),
            upper: problem.upper.iter().zip(&self.col).map(|(&b, &c)| b / c).collect(),
            objective: problem.objective.iter().zip(&self.col).map(|(&v, &c)| v * c).collect(),
            rows,
        }
    }

    fn unapply(&self, outcome: LpOutcome) -> LpOutcome {
        match outcome {
            LpOutcome::Optimal(mut sol) => {
                for (x, &c) in sol.x.iter_mut().zip(&self.col) {
                    *x *= c;
                }
                for (y, &r) in sol.duals.iter_mut().zip(&self.row) {
                    *y *= r;
                }
                LpOutcome::Optimal(sol)
            }
            other => other,
        }
    }
}

fn validate(problem: &LpProblem) -> Result<(), SolveError> {
    let n = problem.objective.len();
    if problem.lower.len() != n || problem.upper.len() != n {
        return Err(SolveError::BadInput(format!(
            "bounds length ({}, {}) does not match objective length {n}",
            problem.lower.len(),
            problem.upper.len()
        )));
    }
    for (j, c) in problem.objective.iter().enumerate() {
        if !c.is_finite() {
            return Err(SolveError::BadInput(format!("objective[{j}] is not finite")));
        }
    }
    for j in 0..n {
        if problem.lower[j].is_nan() || problem.upper[j].is_nan() {
            return Err(SolveError::BadInput(format!("bounds[{j}] contain NaN")));
        }
    }
    for (r, row) in problem.rows.iter().enumerate() {
        if !row.rhs.is_finite() {
            return Err(SolveError::BadInput(format!("row {r} rhs is not finite")));
        }
        for &(j, a) in &row.coeffs {
            if j >= n {
                return Err(SolveError::BadInput(format!(
                    "row {r} references variable {j}, problem has {n}"
                )));
            }
            if !a.is_finite() {
                return Err(SolveError::BadInput(format!("row {r} coefficient is not finite")));
            }
        }
    }
    Ok(())
}

/// No rows: each variable independently sits at its cheapest bound.
fn solve_boxed(problem: &LpProblem) -> Result<LpOutcome, SolveError> {
    let n = problem.objective.len();
    let mut x = vec![0.0; n];
    let mut objective = 0.0;
    for j in 0..n {
        let c = problem.objective[j];
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        let v = if c > COST_TOL {
            if lo.is_finite() { lo } else { return Ok(LpOutcome::Unbounded) }
        } else if c < -COST_TOL {
            if hi.is_finite() { hi } else { return Ok(LpOutcome::Unbounded) }
        } else if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi.min(0.0)
        } else {
            0.0
        };
        x[j] = v;
        objective += c * v;
    }
    Ok(LpOutcome::Optimal(LpOptimal {
        x,
        objective,
        duals: Vec::new(),
        dual_objective: objective,
    }))
}

struct Simplex<'a> {
    problem: &'a LpProblem,
    n: usize,
    m: usize,
    /// Total variable count including slacks.
    nt: usize,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    b: Vec<f64>,
    /// Row-major `m x nt` tableau `B^-1 [A | I]`.
    tab: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    /// Resting value of each nonbasic variable.
    xval: Vec<f64>,
    /// Current value of each basic variable, by row.
    xb: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(problem: &'a LpProblem) -> Self {
        let n = problem.objective.len();
        let m = problem.rows.len();
        let nt = n + m;
        let mut lb = Vec::with_capacity(nt);
        let mut ub = Vec::with_capacity(nt);
        lb.extend_from_slice(&problem.lower);
        ub.extend_from_slice(&problem.upper);
        let mut b = Vec::with_capacity(m);
        for row in &problem.rows {
            match row.sense {
                RowSense::Le => {
                    lb.push(0.0);
                    ub.push(f64::INFINITY);
                }
                RowSense::Ge => {
                    lb.push(f64::NEG_INFINITY);
                    ub.push(0.0);
                }
                RowSense::Eq => {
                    lb.push(0.0);
                    ub.push(0.0);
                }
            }
            b.push(row.rhs);
        }
        let mut cost = vec![0.0; nt];
        cost[..n].copy_from_slice(&problem.objective);

        let mut tab = vec![0.0; m * nt];
        for (r, row) in problem.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                tab[r * nt + j] += a;
            }
            tab[r * nt + n + r] = 1.0;
        }

        let mut state = vec![VarState::Basic; nt];
        let mut xval = vec![0.0; nt];
        for j in 0..n {
            if lb[j].is_finite() {
                state[j] = VarState::AtLower;
                xval[j] = lb[j];
            } else if ub[j].is_finite() {
                state[j] = VarState::AtUpper;
                xval[j] = ub[j];
            } else {
                state[j] = VarState::FreeZero;
                xval[j] = 0.0;
            }
        }
        let basis: Vec<usize> = (n..nt).collect();
        let mut xb = vec![0.0; m];
        for r in 0..m {
            let mut v = b[r];
            for j in 0..n {
                let a = tab[r * nt + j];
                if a != 0.0 {
                    v -= a * xval[j];
                }
            }
            xb[r] = v;
        }
        Simplex { problem, n, m, nt, lb, ub, cost, b, tab, basis, state, xval, xb }
    }

    /// Composite weights: -1 for basics below their lower bound, +1 above
    /// their upper bound. Returns total infeasibility.
    fn classify(&self, w: &mut [f64]) -> f64 {
        let mut infeas = 0.0;
        for r in 0..self.m {
            let k = self.basis[r];
            let v = self.xb[r];
            if v < self.lb[k] - FEAS_TOL {
                w[r] = -1.0;
                infeas += self.lb[k] - v;
            } else if v > self.ub[k] + FEAS_TOL {
                w[r] = 1.0;
                infeas += v - self.ub[k];
            } else {
                w[r] = 0.0;
            }
        }
        infeas
    }

    /// Reduced gradient for the active phase: `g = c_eff - w^T tab` where
    /// `c_eff` is zero in phase 1 and the true cost in phase 2.
    fn gradient(&self, w: &[f64], phase1: bool, g: &mut [f64]) {
        if phase1 {
            g.fill(0.0);
        } else {
            g.copy_from_slice(&self.cost);
        }
        for r in 0..self.m {
            let wr = if phase1 { w[r] } else { self.cost[self.basis[r]] };
            if wr == 0.0 {
                continue;
            }
            let row = &self.tab[r * self.nt..(r + 1) * self.nt];
            for (gj, a) in g.iter_mut().zip(row) {
                *gj -= wr * a;
            }
        }
    }

    /// Pick the entering variable and its direction, or None at optimality.
    fn entering(&self, g: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut pick: Option<(usize, f64)> = None;
        let mut best = COST_TOL;
        for j in 0..self.nt {
            if self.state[j] == VarState::Basic {
                continue;
            }
            if !(self.ub[j] - self.lb[j] > 0.0) {
                continue; // fixed variables never move
            }
            let gj = g[j];
            let dir = match self.state[j] {
                VarState::AtLower => {
                    if gj >= -COST_TOL {
                        continue;
                    }
                    1.0
                }
                VarState::AtUpper => {
                    if gj <= COST_TOL {
                        continue;
                    }
                    -1.0
                }
                VarState::FreeZero => {
                    if gj.abs() <= COST_TOL {
                        continue;
                    }
                    if gj > 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                }
                VarState::Basic => unreachable!(),
            };
            if bland {
                return Some((j, dir));
            }
            if gj.abs() > best {
                best = gj.abs();
                pick = Some((j, dir));
            }
        }
        pick
    }

    fn run(mut self) -> Result<LpOutcome, SolveError> {
        let max_iter = 200 * (self.nt + self.m) + 10_000;
        let mut bland = false;
        let mut streak = 0usize;
        let mut since_refactor = 0usize;
        let mut w = vec![0.0; self.m];
        let mut g = vec![0.0; self.nt];

        for _ in 0..max_iter {
            let infeas = self.classify(&mut w);
            let mut phase1 = infeas > 0.0;
            self.gradient(&w, phase1, &mut g);
            let mut enter = self.entering(&g, bland);
            if enter.is_none() && phase1 {
                if infeas > INFEAS_ACCEPT {
                    return Ok(LpOutcome::Infeasible);
                }
                // Violations are noise-level: fall through to phase 2.
                phase1 = false;
                self.gradient(&w, false, &mut g);
                enter = self.entering(&g, bland);
            }
            let Some((j, dir)) = enter else {
                return self.refine();
            };

            // Ratio test: how far can x_j move before a basic variable (or
            // x_j itself) hits a bound. Infeasible basics moving toward
            // their violated bound block there; ones moving further away
            // never block (their drift is priced into the gradient).
            let xj = self.xval[j];
            let own_cap = if dir > 0.0 { self.ub[j] - xj } else { xj - self.lb[j] };
            let mut t_min = f64::INFINITY;
            let mut blocks: Vec<(usize, f64, bool, f64)> = Vec::new();
            for r in 0..self.m {
                let a = self.tab[r * self.nt + j];
                if a.abs() <= PIVOT_SKIP {
                    continue;
                }
                let rate = -dir * a;
                let k = self.basis[r];
                let v = self.xb[r];
                let (target, to_upper) = if rate > 0.0 {
                    if v < self.lb[k] - FEAS_TOL {
                        (self.lb[k], false)
                    } else if v > self.ub[k] + FEAS_TOL {
                        (f64::INFINITY, false)
                    } else if self.ub[k].is_finite() {
                        (self.ub[k], true)
                    } else {
                        (f64::INFINITY, false)
                    }
                } else if v > self.ub[k] + FEAS_TOL {
                    (self.ub[k], true)
                } else if v < self.lb[k] - FEAS_TOL {
                    (f64::INFINITY, false)
                } else if self.lb[k].is_finite() {
                    (self.lb[k], false)
                } else {
                    (f64::INFINITY, false)
                };
                if !target.is_finite() {
                    continue;
                }
                let step = ((target - v) / rate).max(0.0);
                if step < t_min {
                    t_min = step;
                }
                blocks.push((r, step, to_upper, a.abs()));
            }

            if !own_cap.is_finite() && !t_min.is_finite() {
                if phase1 {
                    return Err(SolveError::Numerical(
                        "phase-1 improving ray has no blocking bound".into(),
                    ));
                }
                return Ok(LpOutcome::Unbounded);
            }

            if own_cap <= t_min {
                // Bound flip: the entering variable crosses to its other
                // bound before any basic blocks.
                let step = own_cap;
                for r in 0..self.m {
                    let a = self.tab[r * self.nt + j];
                    if a != 0.0 {
                        self.xb[r] -= dir * step * a;
                    }
                }
                let to_upper = dir > 0.0;
                self.xval[j] = if to_upper { self.ub[j] } else { self.lb[j] };
                self.state[j] = if to_upper { VarState::AtUpper } else { VarState::AtLower };
                self.track_degeneracy(step, &mut streak, &mut bland);
                continue;
            }

            // Pivot: two-pass ratio test. Among rows whose basic variable
            // would be displaced from its bound by at most HARRIS_SLACK when
            // the step stays at t_min, pick the largest pivot magnitude
            // (lowest basis index among exact ties under Bland, to keep the
            // anti-cycling guarantee).
            let exact_tie = t_min + 1e-9 * (1.0 + t_min.abs());
            let mut pick: Option<(usize, bool, f64)> = None;
            for &(r, step, to_upper, aabs) in &blocks {
                if bland {
                    if step > exact_tie {
                        continue;
                    }
                    let better = match pick {
                        None => true,
                        Some((pr, _, _)) => self.basis[r] < self.basis[pr],
                    };
                    if better {
                        pick = Some((r, to_upper, aabs));
                    }
                    continue;
                }
                if (step - t_min) * aabs > HARRIS_SLACK {
                    continue;
                }
                let better = match pick {
                    None => true,
                    Some((_, _, pa)) => aabs > pa,
                };
                if better {
                    pick = Some((r, to_upper, aabs));
                }
            }
            let (rstar, to_upper, _) = pick.expect("a finite minimum ratio has a blocking row");
            let step = t_min;
            let xj_new = xj + dir * step;
            for r in 0..self.m {
                let a = self.tab[r * self.nt + j];
                if a != 0.0 {
                    self.xb[r] -= dir * step * a;
                }
            }
            let leaving = self.basis[rstar];
            let pivot = self.tab[rstar * self.nt + j];
            let inv = 1.0 / pivot;
            let pivot_row: Vec<f64> =
                self.tab[rstar * self.nt..(rstar + 1) * self.nt].iter().map(|v| v * inv).collect();
            self.tab[rstar * self.nt..(rstar + 1) * self.nt].copy_from_slice(&pivot_row);
            self.tab[rstar * self.nt + j] = 1.0;
            for r in 0..self.m {
                if r == rstar {
                    continue;
                }
                let f = self.tab[r * self.nt + j];
                if f == 0.0 {
                    continue;
                }
                let row = &mut self.tab[r * self.nt..(r + 1) * self.nt];
                for (dst, src) in row.iter_mut().zip(&pivot_row) {
                    *dst -= f * src;
                }
                row[j] = 0.0;
            }
            self.basis[rstar] = j;
            self.state[j] = VarState::Basic;
            self.xb[rstar] = xj_new;
            self.state[leaving] = if to_upper { VarState::AtUpper } else { VarState::AtLower };
            self.xval[leaving] = if to_upper { self.ub[leaving] } else { self.lb[leaving] };
            self.track_degeneracy(step, &mut streak, &mut bland);
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY {
                self.refactorize()?;
                since_refactor = 0;
            }
        }
        Err(SolveError::IterationLimit)
    }

    /// Rebuild the tableau and basic values from a fresh LU factorization of
    /// the current basis, wiping accumulated elimination error.
    fn refactorize(&mut self) -> Result<(), SolveError> {
        let (n, m, nt) = (self.n, self.m, self.nt);
        let mut amat = DMatrix::<f64>::zeros(m, nt);
        for (r, row) in self.problem.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                amat[(r, j)] += a;
            }
            amat[(r, n + r)] = 1.0;
        }
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (col, &k) in self.basis.iter().enumerate() {
            bmat.set_column(col, &amat.column(k));
        }
        let lu = bmat.lu();
        let fresh = lu
            .solve(&amat)
            .ok_or_else(|| SolveError::Numerical("singular basis at refactorization".into()))?;
        for r in 0..m {
            for j in 0..nt {
                self.tab[r * nt + j] = fresh[(r, j)];
            }
        }
        let mut rhs = DVector::from_column_slice(&self.b);
        for j in 0..nt {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let v = self.xval[j];
            if v != 0.0 {
                rhs -= amat.column(j) * v;
            }
        }
        let xb = lu
            .solve(&rhs)
            .ok_or_else(|| SolveError::Numerical("singular basis at refactorization".into()))?;
        self.xb.copy_from_slice(xb.as_slice());
        Ok(())
    }

    fn track_degeneracy(&self, step: f64, streak: &mut usize, bland: &mut bool) {
        if step > DEGENERATE_STEP {
            *streak = 0;
            *bland = false;
        } else {
            *streak += 1;
            if *streak >= BLAND_TRIGGER {
                *bland = true;
            }
        }
    }

    /// Recompute the final point and duals from a fresh LU of the basis.
    fn refine(&self) -> Result<LpOutcome, SolveError> {
        let (n, m) = (self.n, self.m);
        let mut amat = DMatrix::<f64>::zeros(m, n);
        for (r, row) in self.problem.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                amat[(r, j)] += a;
            }
        }
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (col, &k) in self.basis.iter().enumerate() {
            if k < n {
                bmat.set_column(col, &amat.column(k));
            } else {
                bmat[(k - n, col)] = 1.0;
            }
        }
        let mut rhs = DVector::from_column_slice(&self.b);
        for j in 0..n {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let v = self.xval[j];
            if v != 0.0 {
                rhs -= amat.column(j) * v;
            }
        }
        // Nonbasic slacks rest at zero, so they drop out of the rhs.
        //
        // Degenerate redundant rows can leave the final basis numerically
        // singular even though the tracked point is fine; recover those with
        // a least-squares solve, accepted only when its residual is tiny.
        let solve_or_lstsq = |mat: &DMatrix<f64>, target: &DVector<f64>, what: &str| {
            if let Some(sol) = mat.clone().lu().solve(target) {
                return Ok(sol);
            }
            let sol = mat
                .clone()
                .svd(true, true)
                .solve(target, 1e-13)
                .map_err(|e| SolveError::Numerical(format!("{what}: {e}")))?;
            let residual = (mat * &sol - target).amax();
            if residual > 1e-6 * (1.0 + target.amax()) {
                return Err(SolveError::Numerical(format!("{what}: residual {residual:.3e}")));
            }
            Ok(sol)
        };
        let xb_ref = solve_or_lstsq(&bmat, &rhs, "singular basis at refinement")?;
        let cb = DVector::from_iterator(m, self.basis.iter().map(|&k| self.cost[k]));
        let duals = solve_or_lstsq(&bmat.transpose(), &cb, "singular basis transpose at refinement")?;

        let mut x = vec![0.0; n];
        for j in 0..n {
            if self.state[j] != VarState::Basic {
                x[j] = self.xval[j];
            }
        }
        for (r, &k) in self.basis.iter().enumerate() {
            if k < n {
                x[k] = xb_ref[r];
            }
        }
        let objective: f64 = self.problem.objective.iter().zip(&x).map(|(c, v)| c * v).sum();

        // Strong-duality value: y.b plus reduced-cost contributions of
        // nonbasic variables resting at nonzero bounds.
        let mut dual_objective: f64 =
            duals.iter().zip(&self.b).map(|(y, bi)| y * bi).sum();
        for j in 0..n {
            if self.state[j] == VarState::Basic || self.xval[j] == 0.0 {
                continue;
            }
            let rc = self.cost[j] - duals.dot(&amat.column(j));
            dual_objective += rc * self.xval[j];
        }

        Ok(LpOutcome::Optimal(LpOptimal {
            x,
            objective,
            duals: duals.iter().copied().collect(),
            dual_objective,
        }))
    }
}
