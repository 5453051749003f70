//! Linear-programming form of the grid Bellman equation.
//!
//! Variables are the grid values `V(p)`. Each (point, action) pair gives
//!
//! ```text
//! V(p) - beta * sum_y w_a(p, y) V(y) >= g_a(p)
//! ```
//!
//! where `w_a(p, .)` spreads every exact successor of `p` onto grid vertices
//! with its multilinear interpolation weights. Minimizing `sum_p V(p)` then
//! recovers exactly the value-iteration fixed point on the same grid.
//!
//! The solver works on the dual, whose bases correspond to stationary
//! policies: starting from the all-idle policy every pivot is nondegenerate.

pub mod simplex;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::Serialize;

use crate::grid::{BeliefGrid, ValueFunction};
use crate::math::abs;
use crate::model::{Action, ActionSet, ProblemSpec};
use crate::solver::{tie_break, QEvaluator};
use crate::{Error, Result, MAX_CHANNELS};

pub use simplex::{SimplexOptions, SimplexSolution, StandardLp};

/// One inequality `sum terms >= rhs` for a (grid point, action) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpConstraint {
    pub point: usize,
    pub action: Action,
    /// `g_a(p)`.
    pub rhs: f64,
    /// Successor weights `w_a(p, y)` by grid vertex, sorted by vertex.
    pub weights: Vec<(usize, f64)>,
}

impl LpConstraint {
    /// Merged coefficients of `V(p) - beta * sum_y w(y) V(y)`, sorted by
    /// variable.
    pub fn coefficients(&self, beta: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.weights.iter().map(|&(y, w)| (y, -beta * w)).collect();
        match out.binary_search_by_key(&self.point, |&(y, _)| y) {
            Ok(i) => out[i].1 += 1.0,
            Err(i) => out.insert(i, (self.point, 1.0)),
        }
        out
    }

    pub fn name(&self) -> String {
        alloc::format!("c_{}_{}", self.point, self.action.mask())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpProblem {
    pub grid: BeliefGrid,
    pub beta: f64,
    /// Ordered by point, then ascending action mask.
    pub constraints: Vec<LpConstraint>,
}

impl LpProblem {
    pub fn n_variables(&self) -> usize {
        self.grid.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn n_nonzeros(&self) -> usize {
        self.constraints.iter().map(|c| c.coefficients(self.beta).len()).sum()
    }

    /// `min_c (lhs_c(v) - rhs_c)`: negative when `v` violates a constraint.
    pub fn min_slack(&self, v: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| self.slack(c, v))
            .fold(f64::INFINITY, f64::min)
    }

    fn slack(&self, c: &LpConstraint, v: &[f64]) -> f64 {
        let future: f64 = c.weights.iter().map(|&(y, w)| w * v[y]).sum();
        v[c.point] - self.beta * future - c.rhs
    }
}

/// Size caps applied before any constraint is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpLimits {
    pub max_constraints: usize,
    /// Upper bound on stored coefficients, estimated as
    /// `constraints * (1 + 2^N)`.
    pub max_nonzeros: usize,
}

impl Default for LpLimits {
    fn default() -> Self {
        Self { max_constraints: 2_000_000, max_nonzeros: 2_000_000 }
    }
}

pub fn build_lp(spec: &ProblemSpec, grid: &BeliefGrid) -> Result<LpProblem> {
    build_lp_with_limits(spec, grid, LpLimits::default())
}

pub fn build_lp_with_limits(
    spec: &ProblemSpec,
    grid: &BeliefGrid,
    limits: LpLimits,
) -> Result<LpProblem> {
    let n = spec.n_channels();
    let n_actions = 1usize << n;
    let constraints = grid.len().saturating_mul(n_actions);
    if constraints > limits.max_constraints {
        return Err(Error::LpTooLarge {
            what: "constraints",
            value: constraints,
            cap: limits.max_constraints,
        });
    }
    let nonzeros = constraints.saturating_mul(1 + n_actions);
    if nonzeros > limits.max_nonzeros {
        return Err(Error::LpTooLarge { what: "nonzeros", value: nonzeros, cap: limits.max_nonzeros });
    }
    let eval = QEvaluator::new(spec, grid)?;
    let build_point = |point: usize| -> Vec<LpConstraint> {
        let mut idx = [0usize; MAX_CHANNELS];
        grid.unravel(point, &mut idx[..n]);
        eval.actions
            .iter()
            .map(|&a| {
                let mut weights: Vec<(usize, f64)> = Vec::new();
                eval.for_each_successor(&idx[..n], a, |prob, cells| {
                    grid.for_each_vertex(cells, |y, w| {
                        if prob * w > 0.0 {
                            weights.push((y, prob * w));
                        }
                    });
                });
                weights.sort_by_key(|&(y, _)| y);
                weights.dedup_by(|later, kept| {
                    if later.0 == kept.0 {
                        kept.1 += later.1;
                        true
                    } else {
                        false
                    }
                });
                LpConstraint { point, action: a, rhs: eval.immediate(&idx[..n], a), weights }
            })
            .collect()
    };
    #[cfg(feature = "std")]
    let per_point: Vec<Vec<LpConstraint>> = {
        use rayon::prelude::*;
        (0..grid.len()).into_par_iter().map(build_point).collect()
    };
    #[cfg(not(feature = "std"))]
    let per_point: Vec<Vec<LpConstraint>> = (0..grid.len()).map(build_point).collect();
    Ok(LpProblem {
        grid: grid.clone(),
        beta: spec.beta,
        constraints: per_point.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub values: ValueFunction,
    /// Tie-broken action among the constraints binding at each point.
    pub binding: Vec<Action>,
    pub objective: f64,
    /// Largest constraint violation of `values` (0 when feasible).
    pub max_violation: f64,
    pub pivots: usize,
}

/// Solves the LP through its dual with the dense revised simplex.
///
/// `tol` bounds reduced costs, which are exactly the constraint violations of
/// the returned values.
pub fn solve_lp(lp: &LpProblem, tol: f64) -> Result<LpSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let m = lp.n_variables();
    let standard = StandardLp {
        n_rows: m,
        columns: lp.constraints.iter().map(|c| c.coefficients(lp.beta)).collect(),
        costs: lp.constraints.iter().map(|c| c.rhs).collect(),
        rhs: vec![1.0; m],
    };
    // First listed constraint of each point: a stationary policy, whose basis
    // matrix (I - beta P)^T is always invertible with positive solution.
    let mut start = Vec::with_capacity(m);
    let mut last = usize::MAX;
    for (j, c) in lp.constraints.iter().enumerate() {
        if c.point != last {
            start.push(j);
            last = c.point;
        }
    }
    if start.len() != m {
        return Err(Error::LpNumerical("some grid point has no constraint".into()));
    }
    let opts = SimplexOptions { optimality_tol: tol, ..SimplexOptions::default() };
    let sol = simplex::maximize(&standard, Some(&start), &opts)?;
    let values = sol.duals;
    let min_slack = lp.min_slack(&values);
    let scale = 1.0 + values.iter().map(|v| abs(*v)).fold(0.0, f64::max);
    if min_slack < -10.0 * tol * scale {
        return Err(Error::LpNumerical(alloc::format!(
            "solution violates a constraint by {:e}",
            -min_slack
        )));
    }
    let binding = binding_actions(lp, &values, tol.max(1e-9) * scale);
    Ok(LpSolution {
        values: ValueFunction::new(lp.grid.clone(), values)?,
        binding,
        objective: sol.objective,
        max_violation: (-min_slack).max(0.0),
        pivots: sol.pivots,
    })
}

fn binding_actions(lp: &LpProblem, v: &[f64], tol: f64) -> Vec<Action> {
    let n = lp.grid.n_dims();
    let per_point = 1usize << n;
    lp.constraints
        .chunks(per_point)
        .map(|cs| {
            let slacks: Vec<f64> = cs.iter().map(|c| lp.slack(c, v)).collect();
            let least = slacks.iter().copied().fold(f64::INFINITY, f64::min);
            let mut set = ActionSet::default();
            for (c, s) in cs.iter().zip(&slacks) {
                if *s <= least + tol {
                    set.insert(c.action);
                }
            }
            tie_break(set, n).unwrap_or_else(|| Action::none(n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheckReport {
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
    pub pass: bool,
    /// Grid point of the largest difference.
    pub worst_point: usize,
    pub worst_coords: Vec<f64>,
}

pub fn cross_check(v_vi: &ValueFunction, v_lp: &ValueFunction, tol: f64) -> Result<CrossCheckReport> {
    if v_vi.grid != v_lp.grid {
        return Err(Error::GridMismatch);
    }
    let diffs: Vec<f64> = v_vi.values.iter().zip(&v_lp.values).map(|(a, b)| abs(a - b)).collect();
    let (worst_point, max_abs_diff) = diffs
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    let mean_abs_diff = crate::math::pairwise_sum(&diffs) / diffs.len() as f64;
    Ok(CrossCheckReport {
        max_abs_diff,
        mean_abs_diff,
        pass: max_abs_diff <= tol,
        worst_point,
        worst_coords: v_vi.grid.point(worst_point),
    })
}

/// Renders the LP in CPLEX LP format. Variable `v_i` is grid point `i`.
pub fn write_lp(lp: &LpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ {} variables, {} constraints, beta = {}",
        lp.n_variables(),
        lp.n_constraints(),
        lp.beta
    );
    out.push_str("Minimize\n");
    let mut line = LineWriter::new(&mut out, " obj:");
    for i in 0..lp.n_variables() {
        line.term(1.0, i);
    }
    line.finish("");
    out.push_str("Subject To\n");
    for c in &lp.constraints {
        let head = alloc::format!(" {}:", c.name());
        let mut line = LineWriter::new(&mut out, &head);
        for (y, a) in c.coefficients(lp.beta) {
            if a != 0.0 {
                line.term(a, y);
            }
        }
        let tail = alloc::format!(" >= {}", number(c.rhs));
        line.finish(&tail);
    }
    out.push_str("Bounds\n");
    for i in 0..lp.n_variables() {
        let _ = writeln!(out, " v_{i} free");
    }
    out.push_str("End\n");
    out
}

fn number(x: f64) -> String {
    let a = abs(x);
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        alloc::format!("{x}")
    } else {
        alloc::format!("{x:e}")
    }
}

/// Accumulates `+ a v_i` terms, wrapping before the format's line limit.
struct LineWriter<'a> {
    out: &'a mut String,
    width: usize,
    first: bool,
}

impl<'a> LineWriter<'a> {
    const WRAP: usize = 200;

    fn new(out: &'a mut String, head: &str) -> Self {
        out.push_str(head);
        Self { out, width: head.len(), first: true }
    }

    fn term(&mut self, a: f64, var: usize) {
        let mag = abs(a);
        let coef = if mag == 1.0 { String::new() } else { alloc::format!("{} ", number(mag)) };
        let text = match (self.first, a < 0.0) {
            (true, false) => alloc::format!(" {coef}v_{var}"),
            (_, true) => alloc::format!(" - {coef}v_{var}"),
            (false, false) => alloc::format!(" + {coef}v_{var}"),
        };
        if self.width + text.len() > Self::WRAP {
            self.out.push_str("\n   ");
            self.width = 3;
        }
        self.out.push_str(&text);
        self.width += text.len();
        self.first = false;
    }

    fn finish(self, tail: &str) {
        if self.first {
            self.out.push_str(" 0 v_0");
        }
        self.out.push_str(tail);
        self.out.push('\n');
    }
}
