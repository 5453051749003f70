//! Value iteration on a belief grid and greedy policy extraction.
//!
//! Successors of grid points are exact beliefs: revealed channels jump to
//! `lambda0`/`lambda1` (always grid coordinates) and unobserved channels move
//! to `T(p_j)`, which is generally off-grid and is read from the current field
//! by multilinear interpolation. The Bellman operator is therefore a
//! `beta`-contraction on grid fields and has a unique fixed point per grid.

use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::grid::{BeliefGrid, Located, ValueFunction};
use crate::math::abs;
use crate::model::{
    enumerate_actions, immediate_reward, successor_outcomes, validate_spec, Action, ActionSet,
    Belief, ProblemSpec,
};
use crate::{Error, Result, MAX_CHANNELS};

/// Default absolute tolerance when collecting tied maximizers.
pub const DEFAULT_TIE_EPSILON: f64 = 1e-9;

/// `Q_a(p) = g_a(p) + beta * sum_y Pr(y) V(y)` at an arbitrary belief.
pub fn q_value(spec: &ProblemSpec, v: &ValueFunction, p: &Belief, a: Action) -> Result<f64> {
    let g = crate::model::immediate_reward_checked(spec, a, p)?;
    let outcomes = successor_outcomes(&spec.channel, a, p)?;
    let future: f64 = outcomes
        .outcomes
        .iter()
        .filter(|o| o.probability > 0.0)
        .map(|o| o.probability * v.interpolate(o.belief.coords()))
        .sum();
    Ok(g + spec.beta * future)
}

/// Precomputed successor geometry of one grid, shared by every sweep.
pub(crate) struct QEvaluator<'a> {
    pub(crate) spec: &'a ProblemSpec,
    pub(crate) grid: &'a BeliefGrid,
    pub(crate) actions: Vec<Action>,
    /// `propagated[j][i]`: location of `T(axis_j[i])` on axis `j`.
    propagated: Vec<Vec<Located>>,
    lambda0_idx: [usize; MAX_CHANNELS],
    lambda1_idx: [usize; MAX_CHANNELS],
}

impl<'a> QEvaluator<'a> {
    pub(crate) fn new(spec: &'a ProblemSpec, grid: &'a BeliefGrid) -> Result<Self> {
        let report = validate_spec(spec);
        if !report.is_valid() {
            return Err(Error::InvalidSpec(report));
        }
        let n = spec.n_channels();
        if grid.n_dims() != n {
            return Err(Error::DimensionMismatch { expected: n, found: grid.n_dims() });
        }
        if !grid.supports(&spec.channel) {
            return Err(Error::InvalidArgument(
                "grid axes must contain lambda0 and lambda1 exactly".into(),
            ));
        }
        let propagated = (0..n)
            .map(|j| {
                grid.axis(j)
                    .iter()
                    .map(|&x| grid.locate(j, spec.channel.propagate(x)))
                    .collect()
            })
            .collect();
        let mut lambda0_idx = [0; MAX_CHANNELS];
        let mut lambda1_idx = [0; MAX_CHANNELS];
        for j in 0..n {
            lambda0_idx[j] = grid.axis_index(j, spec.channel.lambda0).unwrap_or_default();
            lambda1_idx[j] = grid.axis_index(j, spec.channel.lambda1).unwrap_or_default();
        }
        Ok(Self { spec, grid, actions: enumerate_actions(n), propagated, lambda0_idx, lambda1_idx })
    }

    pub(crate) fn n(&self) -> usize {
        self.grid.n_dims()
    }

    /// Visits every successor of grid point `idx` under `a` with its
    /// probability, as located cells. Zero-probability outcomes are skipped.
    #[inline]
    pub(crate) fn for_each_successor(
        &self,
        idx: &[usize],
        a: Action,
        mut visit: impl FnMut(f64, &[Located]),
    ) {
        let n = self.n();
        let mut cells = [Located { lo: 0, frac: 0.0 }; MAX_CHANNELS];
        let mut used = [0usize; MAX_CHANNELS];
        let mut k = 0;
        for j in 0..n {
            if a.uses(j) {
                used[k] = j;
                k += 1;
            } else {
                cells[j] = self.propagated[j][idx[j]];
            }
        }
        for pattern in 0..(1usize << k) {
            let mut prob = 1.0;
            for (i, &j) in used[..k].iter().enumerate() {
                let p = self.grid.axis(j)[idx[j]];
                if pattern >> (k - 1 - i) & 1 == 1 {
                    prob *= p;
                    cells[j] = Located { lo: self.lambda1_idx[j], frac: 0.0 };
                } else {
                    prob *= 1.0 - p;
                    cells[j] = Located { lo: self.lambda0_idx[j], frac: 0.0 };
                }
            }
            if prob > 0.0 {
                visit(prob, &cells[..n]);
            }
        }
    }

    #[inline]
    pub(crate) fn immediate(&self, idx: &[usize], a: Action) -> f64 {
        let mut p = [0.0; MAX_CHANNELS];
        for j in 0..self.n() {
            p[j] = self.grid.axis(j)[idx[j]];
        }
        immediate_reward(self.spec, a, &p[..self.n()])
    }

    /// Q-value at grid point `idx` against the field `values`.
    #[inline]
    pub(crate) fn q(&self, values: &[f64], idx: &[usize], a: Action) -> f64 {
        let g = self.immediate(idx, a);
        if self.spec.beta == 0.0 {
            return g;
        }
        let mut future = 0.0;
        self.for_each_successor(idx, a, |prob, cells| {
            let mut acc = 0.0;
            self.grid.for_each_vertex(cells, |i, w| acc += w * values[i]);
            future += prob * acc;
        });
        g + self.spec.beta * future
    }

    /// Bellman image of `values` at the grid point with flat index `point`.
    #[inline]
    pub(crate) fn backup_point(&self, values: &[f64], point: usize) -> f64 {
        let mut idx = [0usize; MAX_CHANNELS];
        self.grid.unravel(point, &mut idx[..self.n()]);
        self.actions
            .iter()
            .map(|&a| self.q(values, &idx[..self.n()], a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes the Bellman image of `src` into `dst`; returns the sup-norm of
    /// the change.
    pub(crate) fn sweep(&self, src: &[f64], dst: &mut [f64]) -> f64 {
        #[cfg(feature = "std")]
        {
            use rayon::prelude::*;
            const CHUNK: usize = 512;
            dst.par_chunks_mut(CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut worst = 0.0f64;
                    for (o, slot) in chunk.iter_mut().enumerate() {
                        let i = c * CHUNK + o;
                        *slot = self.backup_point(src, i);
                        worst = worst.max(abs(*slot - src[i]));
                    }
                    worst
                })
                .reduce(|| 0.0, f64::max)
        }
        #[cfg(not(feature = "std"))]
        {
            let mut worst = 0.0f64;
            for (i, slot) in dst.iter_mut().enumerate() {
                *slot = self.backup_point(src, i);
                worst = worst.max(abs(*slot - src[i]));
            }
            worst
        }
    }
}

/// One application of the Bellman operator. The input is left untouched.
pub fn bellman_backup(spec: &ProblemSpec, v: &ValueFunction) -> Result<(ValueFunction, f64)> {
    let eval = QEvaluator::new(spec, &v.grid)?;
    let mut out = vec![0.0; v.values.len()];
    let residual = eval.sweep(&v.values, &mut out);
    Ok((ValueFunction { grid: v.grid.clone(), values: out }, residual))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    /// Sup-norm change of every sweep, in order.
    pub residuals: Vec<f64>,
}

/// Value-iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueIteration {
    /// Target sup-norm distance to the fixed point.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for ValueIteration {
    fn default() -> Self {
        Self { epsilon: 1e-6, max_iterations: 100_000 }
    }
}

impl ValueIteration {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    /// Residual at which iteration stops: `epsilon (1 - beta) / (2 beta)`.
    pub fn stopping_residual(&self, beta: f64) -> f64 {
        if beta == 0.0 {
            f64::INFINITY
        } else {
            self.epsilon * (1.0 - beta) / (2.0 * beta)
        }
    }

    /// Iterates from `V = 0` until the stopping residual is reached.
    pub fn run(&self, spec: &ProblemSpec, grid: &BeliefGrid) -> Result<(ValueFunction, SolveStats)> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        let eval = QEvaluator::new(spec, grid)?;
        let threshold = self.stopping_residual(spec.beta);
        let mut current = vec![0.0; grid.len()];
        let mut next = vec![0.0; grid.len()];
        let mut residuals = Vec::new();
        loop {
            let residual = eval.sweep(&current, &mut next);
            residuals.push(residual);
            core::mem::swap(&mut current, &mut next);
            if residual <= threshold {
                break;
            }
            if residuals.len() >= self.max_iterations {
                return Err(Error::NonConvergence { iterations: residuals.len(), residual });
            }
        }
        let stats = SolveStats {
            iterations: residuals.len(),
            residual: *residuals.last().unwrap_or(&0.0),
            residuals,
        };
        Ok((ValueFunction { grid: grid.clone(), values: current }, stats))
    }
}

/// [`ValueIteration::run`] with the default iteration cap.
pub fn value_iterate(
    spec: &ProblemSpec,
    grid: &BeliefGrid,
    epsilon: f64,
) -> Result<(ValueFunction, SolveStats)> {
    ValueIteration::new(epsilon).run(spec, grid)
}

/// Greedy policy on a grid: the tie-broken choice plus the full set of
/// near-maximizers at every point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy {
    pub grid: BeliefGrid,
    pub choice: Vec<Action>,
    pub argmax: Vec<ActionSet>,
    /// Best Q-value at each point.
    pub best_q: Vec<f64>,
}

impl Policy {
    pub fn n_channels(&self) -> usize {
        self.grid.n_dims()
    }

    /// Action of the grid point nearest to `p`.
    pub fn action_at(&self, p: &[f64]) -> Action {
        self.choice[self.grid.nearest_index(p)]
    }

    /// Builds a policy from explicit choices; each argmax set is the
    /// singleton choice. Used for synthetic policies.
    pub fn from_choices(grid: BeliefGrid, choice: Vec<Action>) -> Result<Self> {
        if choice.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: choice.len() });
        }
        let argmax = choice
            .iter()
            .map(|&a| {
                let mut s = ActionSet::default();
                s.insert(a);
                s
            })
            .collect();
        let best_q = vec![0.0; choice.len()];
        Ok(Self { grid, choice, argmax, best_q })
    }
}

/// Picks the tie-break winner among `set`: fewest channels, then smallest
/// mask.
pub fn tie_break(set: ActionSet, n: usize) -> Option<Action> {
    set.iter(n).min_by_key(|a| a.tie_break_key())
}

/// Greedy policy of `v`. Actions within `tie_epsilon` of the best Q-value
/// form the argmax set.
pub fn extract_policy(spec: &ProblemSpec, v: &ValueFunction, tie_epsilon: f64) -> Result<Policy> {
    let eval = QEvaluator::new(spec, &v.grid)?;
    let n = eval.n();
    let len = v.grid.len();
    let mut choice = Vec::with_capacity(len);
    let mut argmax = Vec::with_capacity(len);
    let mut best_q = Vec::with_capacity(len);
    let mut idx = [0usize; MAX_CHANNELS];
    let mut qs = [0.0f64; 1 << MAX_CHANNELS];
    for point in 0..len {
        v.grid.unravel(point, &mut idx[..n]);
        let mut best = f64::NEG_INFINITY;
        for (i, &a) in eval.actions.iter().enumerate() {
            qs[i] = eval.q(&v.values, &idx[..n], a);
            best = best.max(qs[i]);
        }
        let mut set = ActionSet::default();
        for (i, &a) in eval.actions.iter().enumerate() {
            if qs[i] >= best - tie_epsilon {
                set.insert(a);
            }
        }
        choice.push(tie_break(set, n).expect("argmax set is never empty"));
        argmax.push(set);
        best_q.push(best);
    }
    Ok(Policy { grid: v.grid.clone(), choice, argmax, best_q })
}

/// All Q-values at grid point `point`, indexed by action mask.
pub fn q_values_at(spec: &ProblemSpec, v: &ValueFunction, point: usize) -> Result<Vec<f64>> {
    let eval = QEvaluator::new(spec, &v.grid)?;
    let n = eval.n();
    let mut idx = [0usize; MAX_CHANNELS];
    v.grid.unravel(point, &mut idx[..n]);
    Ok(eval.actions.iter().map(|&a| eval.q(&v.values, &idx[..n], a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::{reference_spec, ChannelParams};

    fn always_good() -> ProblemSpec {
        let mut spec = reference_spec();
        spec.channel = ChannelParams { lambda0: 1.0, lambda1: 1.0 };
        spec
    }

    #[test]
    fn beta_zero_q_is_immediate_reward() {
        let mut spec = reference_spec();
        spec.beta = 0.0;
        let grid = build_grid(&spec, 5).unwrap();
        let v = ValueFunction::from_fn(grid, |p| 100.0 * p[0]);
        let b = Belief::new(vec![0.3, 0.7, 0.45]).unwrap();
        for a in enumerate_actions(3) {
            let q = q_value(&spec, &v, &b, a).unwrap();
            assert_eq!(q, immediate_reward(&spec, a, b.coords()));
        }
    }

    #[test]
    fn null_action_q_is_discounted_propagated_value() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 11).unwrap();
        let v = ValueFunction::from_fn(grid, |p| p[0] + 2.0 * p[1] * p[1] - p[2]);
        let b = Belief::new(vec![0.2, 0.55, 0.0]).unwrap();
        let t: Vec<f64> = b.coords().iter().map(|&p| spec.channel.propagate(p)).collect();
        let q = q_value(&spec, &v, &b, Action::none(3)).unwrap();
        assert!((q - 0.9 * v.interpolate(&t)).abs() < 1e-14);
    }

    #[test]
    fn fast_q_matches_reference_q() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 7).unwrap();
        let v = ValueFunction::from_fn(grid.clone(), |p| 3.0 * p[0] * p[1] + p[2] * p[2] - 0.4 * p[1]);
        let eval = QEvaluator::new(&spec, &grid).unwrap();
        let mut idx = [0usize; 3];
        for point in (0..grid.len()).step_by(11) {
            grid.unravel(point, &mut idx);
            let b = Belief::new(grid.point(point)).unwrap();
            for a in enumerate_actions(3) {
                let fast = eval.q(&v.values, &idx, a);
                let slow = q_value(&spec, &v, &b, a).unwrap();
                assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn always_good_channels_converge_to_geometric_series() {
        let spec = always_good();
        let grid = build_grid(&spec, 5).unwrap();
        let eps = 1e-8;
        let (v, _) = value_iterate(&spec, &grid, eps).unwrap();
        let closed = 3.0 * 1.78 / (1.0 - 0.9);
        // From the next slot on every channel is known good.
        for (i, &x) in v.values.iter().enumerate() {
            let p = grid.point(i);
            let best = enumerate_actions(3)
                .into_iter()
                .map(|a| immediate_reward(&spec, a, &p))
                .fold(f64::NEG_INFINITY, f64::max);
            let expect = best + 0.9 * closed;
            assert!((x - expect).abs() <= eps, "{x} vs {expect}");
        }
        let b = Belief::new(vec![1.0; 3]).unwrap();
        let q = q_value(&spec, &v, &b, Action::all(3)).unwrap();
        assert!((q - 53.4).abs() < 1e-7);
    }

    #[test]
    fn beta_zero_converges_in_one_sweep() {
        let mut spec = reference_spec();
        spec.beta = 0.0;
        let grid = build_grid(&spec, 6).unwrap();
        let (v, stats) = value_iterate(&spec, &grid, 1e-9).unwrap();
        assert_eq!(stats.iterations, 1);
        for i in 0..grid.len() {
            let p = grid.point(i);
            let best = enumerate_actions(3)
                .into_iter()
                .map(|a| immediate_reward(&spec, a, &p))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(v.values[i], best);
        }
    }

    #[test]
    fn first_backup_from_zero_is_myopic_value() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 5).unwrap();
        let (v1, _) = bellman_backup(&spec, &ValueFunction::zeros(grid.clone())).unwrap();
        for i in 0..grid.len() {
            let p = grid.point(i);
            let best = enumerate_actions(3)
                .into_iter()
                .map(|a| immediate_reward(&spec, a, &p))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v1.values[i] - best).abs() < 1e-14);
        }
    }

    #[test]
    fn residuals_contract() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 6).unwrap();
        let (v, stats) = value_iterate(&spec, &grid, 1e-7).unwrap();
        for w in stats.residuals.windows(2) {
            assert!(w[1] <= spec.beta * w[0] + 1e-12);
        }
        let (_, residual) = bellman_backup(&spec, &v).unwrap();
        assert!(residual <= ValueIteration::new(1e-7).stopping_residual(spec.beta));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 3).unwrap();
        let vi = ValueIteration { epsilon: 1e-9, max_iterations: 3 };
        assert!(matches!(vi.run(&spec, &grid), Err(Error::NonConvergence { iterations: 3, .. })));
    }

    #[test]
    fn grid_must_contain_lambdas() {
        let spec = reference_spec();
        let grid = BeliefGrid::from_axes(vec![vec![0.0, 0.5, 1.0]; 3]).unwrap();
        assert!(value_iterate(&spec, &grid, 1e-3).is_err());
    }

    #[test]
    fn vertex_choices_match_vertex_actions() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 11).unwrap();
        let (v, _) = value_iterate(&spec, &grid, 1e-7).unwrap();
        let policy = extract_policy(&spec, &v, DEFAULT_TIE_EPSILON).unwrap();
        for mask in [0u32, 4, 7] {
            let a = Action::new(3, mask);
            let vertex: Vec<f64> = a.to_bits().iter().map(|&b| b as f64).collect();
            let i = grid.index_of(&vertex).unwrap();
            assert_eq!(policy.choice[i], a);
            assert!(policy.argmax[i].contains(a));
        }
    }

    #[test]
    fn tie_break_prefers_fewest_channels_then_smallest_mask() {
        let mut set = ActionSet::default();
        set.insert(Action::new(3, 6));
        set.insert(Action::new(3, 4));
        set.insert(Action::new(3, 1));
        assert_eq!(tie_break(set, 3), Some(Action::new(3, 1)));
        let mut set = ActionSet::default();
        set.insert(Action::new(3, 7));
        set.insert(Action::new(3, 3));
        assert_eq!(tie_break(set, 3), Some(Action::new(3, 3)));
    }
}
