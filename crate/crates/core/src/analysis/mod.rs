//! Decision regions of a solved policy and the structural checks on them.
//!
//! Volumes and connectivity use the tie-broken choice, so the regions
//! partition the grid. Contiguity and symmetry use argmax sets, which do not
//! depend on how ties are broken.

pub mod sweep;
pub mod threshold;

use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::grid::{BeliefGrid, ValueFunction};
use crate::math::abs;
use crate::model::{enumerate_actions, Action, ProblemSpec};
use crate::solver::{Policy, QEvaluator};
use crate::{Error, Result, MAX_CHANNELS};

pub use sweep::{instantiate, sweep, SweepOptions, SweepParameter, SweepRow};
pub use threshold::{
    boundary_plane_policy, canonical_thresholds, edge_threshold, CanonicalThreshold, Edge, Plane,
    PlaneSlice, ThresholdResult,
};

/// Relative slack of the discrete convexity check.
pub const CONVEXITY_TOL: f64 = 1e-6;
/// Relative slack of the coordinatewise monotonicity check.
pub const MONOTONICITY_TOL: f64 = 1e-9;
/// Absolute tolerance of the permutation checks.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// The vertex of `[0, 1]^N` whose good channels are exactly those `a` uses.
pub fn action_vertex(a: Action) -> Vec<f64> {
    (0..a.n_channels()).map(|j| if a.uses(j) { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionRegion {
    pub action: Action,
    pub count: usize,
    /// Fraction of grid points.
    pub volume: f64,
    /// Trapezoid-weighted volume. Unlike `volume` it does not depend on how
    /// unevenly the grid points are spaced.
    pub measure: f64,
    pub connectivity: Connectivity,
    /// Per axis: every grid line meets the region in at most one run.
    pub contiguous: Vec<bool>,
    pub contains_vertex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionReport {
    pub n_points: usize,
    /// Indexed by action mask.
    pub regions: Vec<ActionRegion>,
}

impl RegionReport {
    pub fn region(&self, a: Action) -> &ActionRegion {
        &self.regions[a.mask() as usize]
    }

    pub fn volume(&self, a: Action) -> f64 {
        self.region(a).volume
    }

    pub fn measure(&self, a: Action) -> f64 {
        self.region(a).measure
    }

    pub fn all_vertices_pass(&self) -> bool {
        self.regions.iter().all(|r| r.contains_vertex)
    }

    pub fn all_nonempty(&self) -> bool {
        self.regions.iter().all(|r| r.count > 0)
    }

    pub fn all_singly_connected(&self) -> bool {
        self.regions.iter().all(|r| r.connectivity == Connectivity::Components(1))
    }
}

pub fn decision_regions(policy: &Policy) -> RegionReport {
    let grid = &policy.grid;
    let n = grid.n_dims();
    let total = grid.len();
    let weights = grid.point_weights();
    let regions = enumerate_actions(n)
        .into_iter()
        .map(|a| {
            let member: Vec<bool> = policy.choice.iter().map(|&c| c == a).collect();
            let count = member.iter().filter(|&&m| m).count();
            let vertex = grid.index_of(&action_vertex(a));
            ActionRegion {
                action: a,
                count,
                volume: count as f64 / total as f64,
                measure: crate::math::pairwise_sum(
                    &member.iter().zip(&weights).map(|(&m, &w)| if m { w } else { 0.0 }).collect::<Vec<_>>(),
                ),
                connectivity: connectivity_of(grid, &member),
                contiguous: (0..n).map(|axis| line_runs(grid, axis, &member).is_empty()).collect(),
                contains_vertex: vertex.is_some_and(|i| policy.choice[i] == a),
            }
        })
        .collect();
    RegionReport { n_points: total, regions }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Empty,
    Components(usize),
}

impl Connectivity {
    pub fn components(&self) -> usize {
        match self {
            Connectivity::Empty => 0,
            Connectivity::Components(c) => *c,
        }
    }
}

/// Face-adjacent components of the tie-broken region of `action`.
pub fn check_connectivity(policy: &Policy, action: Action) -> Connectivity {
    let member: Vec<bool> = policy.choice.iter().map(|&c| c == action).collect();
    connectivity_of(&policy.grid, &member)
}

fn connectivity_of(grid: &BeliefGrid, member: &[bool]) -> Connectivity {
    let n = grid.n_dims();
    let mut seen = vec![false; member.len()];
    let mut stack = Vec::new();
    let mut components = 0;
    let mut idx = [0usize; MAX_CHANNELS];
    for start in 0..member.len() {
        if !member[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            grid.unravel(i, &mut idx[..n]);
            for j in 0..n {
                let stride = grid.strides()[j];
                let mut visit = |k: usize| {
                    if member[k] && !seen[k] {
                        seen[k] = true;
                        stack.push(k);
                    }
                };
                if idx[j] > 0 {
                    visit(i - stride);
                }
                if idx[j] + 1 < grid.axis(j).len() {
                    visit(i + stride);
                }
            }
        }
    }
    if components == 0 {
        Connectivity::Empty
    } else {
        Connectivity::Components(components)
    }
}

/// Start points of every grid line along `axis`.
fn line_starts(grid: &BeliefGrid, axis: usize) -> impl Iterator<Item = usize> + '_ {
    let n = grid.n_dims();
    (0..grid.len()).filter(move |&i| {
        let mut idx = [0usize; MAX_CHANNELS];
        grid.unravel(i, &mut idx[..n]);
        idx[axis] == 0
    })
}

/// Lines along `axis` where `member` splits into more than one run, with the
/// run count.
fn line_runs(grid: &BeliefGrid, axis: usize, member: &[bool]) -> Vec<(usize, usize)> {
    let stride = grid.strides()[axis];
    let len = grid.axis(axis).len();
    line_starts(grid, axis)
        .filter_map(|start| {
            let mut runs = 0;
            let mut prev = false;
            for k in 0..len {
                let m = member[start + k * stride];
                if m && !prev {
                    runs += 1;
                }
                prev = m;
            }
            (runs > 1).then_some((start, runs))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContiguityViolation {
    pub action: Action,
    pub axis: usize,
    /// Coordinates of the first point of the offending line.
    pub line_start: Vec<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContiguityReport {
    pub axis: usize,
    pub lines: usize,
    pub violations: Vec<ContiguityViolation>,
}

impl ContiguityReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Along every grid line parallel to `axis`, the points whose argmax set
/// contains an action must form one run, for every action.
pub fn check_contiguity(policy: &Policy, axis: usize) -> Result<ContiguityReport> {
    let grid = &policy.grid;
    let n = grid.n_dims();
    if axis >= n {
        return Err(Error::InvalidArgument(alloc::format!("axis {axis} out of range")));
    }
    let mut violations = Vec::new();
    for a in enumerate_actions(n) {
        let member: Vec<bool> = policy.argmax.iter().map(|s| s.contains(a)).collect();
        for (start, runs) in line_runs(grid, axis, &member) {
            violations.push(ContiguityViolation { action: a, axis, line_start: grid.point(start), runs });
        }
    }
    let lines = grid.len() / grid.axis(axis).len();
    Ok(ContiguityReport { axis, lines, violations })
}

pub fn check_contiguity_all(policy: &Policy) -> Vec<ContiguityReport> {
    (0..policy.grid.n_dims())
        .map(|axis| check_contiguity(policy, axis).expect("axis in range"))
        .collect()
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| current[j] > current[i]).expect("successor exists");
        current.swap(i, j);
        current[i + 1..].reverse();
    }
}

/// Grid index of the point whose coordinate `j` moves to position `perm[j]`.
fn permuted_index(grid: &BeliefGrid, point: usize, perm: &[usize]) -> usize {
    let n = grid.n_dims();
    let mut idx = [0usize; MAX_CHANNELS];
    let mut out = [0usize; MAX_CHANNELS];
    grid.unravel(point, &mut idx[..n]);
    for j in 0..n {
        out[perm[j]] = idx[j];
    }
    grid.ravel(&out[..n])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub permutations_checked: usize,
    /// `max |V(p) - V(rho p)|`.
    pub worst_value_deviation: f64,
    /// `max |Q(p, a) - Q(rho p, rho a)|`.
    pub worst_q_deviation: f64,
    /// Permutations with a deviation above the tolerance.
    pub failing: Vec<Vec<usize>>,
    /// Grid point of the worst deviation.
    pub worst_point: Vec<f64>,
    pub pass: bool,
}

/// Permutation invariance of `v` and equivariance of its Q-values over every
/// permutation of the coordinates.
pub fn check_symmetry(spec: &ProblemSpec, v: &ValueFunction, tol: f64) -> Result<SymmetryReport> {
    let grid = &v.grid;
    if !grid.is_symmetric() {
        return Err(Error::AsymmetricGrid);
    }
    let q = q_table(spec, v)?;
    let n = grid.n_dims();
    let n_actions = 1usize << n;
    let actions = enumerate_actions(n);
    let perms = permutations(n);
    let mut worst_v = 0.0f64;
    let mut worst_q = 0.0f64;
    let mut worst_at = (0usize, 0.0f64);
    let mut failing = Vec::new();
    for perm in &perms {
        let mut local = 0.0f64;
        let permuted_actions: Vec<usize> = actions.iter().map(|a| a.permuted(perm).mask() as usize).collect();
        for p in 0..grid.len() {
            let rp = permuted_index(grid, p, perm);
            let dv = abs(v.values[p] - v.values[rp]);
            worst_v = worst_v.max(dv);
            let mut dq = 0.0f64;
            for a in 0..n_actions {
                dq = dq.max(abs(q[p * n_actions + a] - q[rp * n_actions + permuted_actions[a]]));
            }
            worst_q = worst_q.max(dq);
            let d = dv.max(dq);
            if d > worst_at.1 {
                worst_at = (p, d);
            }
            local = local.max(d);
        }
        if local > tol {
            failing.push(perm.clone());
        }
    }
    Ok(SymmetryReport {
        permutations_checked: perms.len(),
        worst_value_deviation: worst_v,
        worst_q_deviation: worst_q,
        pass: failing.is_empty(),
        failing,
        worst_point: grid.point(worst_at.0),
    })
}

/// Grid points where `argmax(rho p) != rho(argmax(p))` for some permutation.
pub fn argmax_equivariance_violations(policy: &Policy) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
    let grid = &policy.grid;
    if !grid.is_symmetric() {
        return Err(Error::AsymmetricGrid);
    }
    let n = grid.n_dims();
    let mut out = Vec::new();
    for perm in permutations(n) {
        for p in 0..grid.len() {
            let rp = permuted_index(grid, p, &perm);
            if policy.argmax[p].permuted(n, &perm) != policy.argmax[rp] {
                out.push((grid.point(p), perm.clone()));
            }
        }
    }
    Ok(out)
}

/// Q-values of every action at every grid point, point-major.
pub fn q_table(spec: &ProblemSpec, v: &ValueFunction) -> Result<Vec<f64>> {
    let eval = QEvaluator::new(spec, &v.grid)?;
    let n = eval.n();
    let mut idx = [0usize; MAX_CHANNELS];
    let mut out = Vec::with_capacity(v.grid.len() << n);
    for p in 0..v.grid.len() {
        v.grid.unravel(p, &mut idx[..n]);
        for &a in &eval.actions {
            out.push(eval.q(&v.values, &idx[..n], a));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineCheckReport {
    /// Smallest slack found; negative beyond the tolerance means failure.
    pub worst: f64,
    pub worst_point: Vec<f64>,
    pub worst_axis: usize,
    pub pass: bool,
}

/// Discrete convexity along every axis-parallel grid line. On non-uniform
/// axes the second difference is the slope change times the mean spacing.
pub fn check_convexity(v: &ValueFunction, rel_tol: f64) -> LineCheckReport {
    scan_lines(v, |_, x, y, k| {
        let s1 = (y[k] - y[k - 1]) / (x[k] - x[k - 1]);
        let s2 = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
        let d2 = (s2 - s1) * 0.5 * (x[k + 1] - x[k - 1]);
        Some(d2 + rel_tol * (1.0 + abs(y[k])))
    })
}

/// `V` nondecreasing along every axis.
pub fn check_monotonicity(v: &ValueFunction, rel_tol: f64) -> LineCheckReport {
    scan_lines(v, |_, _, y, k| Some(y[k + 1] - y[k] + rel_tol * (1.0 + abs(y[k]))))
}

/// Runs `slack(axis, coords, values, k)` at interior positions `k` of every
/// line and keeps the minimum.
fn scan_lines(
    v: &ValueFunction,
    slack: impl Fn(usize, &[f64], &[f64], usize) -> Option<f64>,
) -> LineCheckReport {
    let grid = &v.grid;
    let mut worst = (f64::INFINITY, 0usize, 0usize);
    let mut line = Vec::new();
    for axis in 0..grid.n_dims() {
        let x = grid.axis(axis);
        let stride = grid.strides()[axis];
        for start in line_starts(grid, axis) {
            line.clear();
            line.extend((0..x.len()).map(|k| v.values[start + k * stride]));
            for k in 1..x.len() - 1 {
                if let Some(s) = slack(axis, x, &line, k) {
                    if s < worst.0 {
                        worst = (s, start + k * stride, axis);
                    }
                }
            }
        }
    }
    let finite = worst.0.is_finite();
    LineCheckReport {
        worst: if finite { worst.0 } else { 0.0 },
        worst_point: grid.point(worst.1),
        worst_axis: worst.2,
        pass: !finite || worst.0 >= 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::reference_spec;
    use crate::solver::{extract_policy, value_iterate, DEFAULT_TIE_EPSILON};

    fn line_grid(points: usize) -> BeliefGrid {
        let axis: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
        BeliefGrid::from_axes(vec![axis.clone(), axis]).unwrap()
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(2), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn alternating_line_breaks_contiguity() {
        let grid = line_grid(4);
        let a = Action::new(2, 0);
        let b = Action::new(2, 3);
        // Second coordinate alternates a, b, a, b on every line along axis 1.
        let choice = (0..16).map(|i| if i % 2 == 0 { a } else { b }).collect();
        let policy = Policy::from_choices(grid, choice).unwrap();
        let along = check_contiguity(&policy, 1).unwrap();
        assert!(!along.pass());
        assert_eq!(along.violations.len(), 8);
        assert!(check_contiguity(&policy, 0).unwrap().pass());
        assert_eq!(check_connectivity(&policy, a), Connectivity::Components(2));
    }

    #[test]
    fn single_action_policy_is_trivially_contiguous() {
        let grid = line_grid(5);
        let policy = Policy::from_choices(grid, vec![Action::new(2, 1); 25]).unwrap();
        assert!(check_contiguity_all(&policy).iter().all(|r| r.pass()));
        assert_eq!(check_connectivity(&policy, Action::new(2, 1)), Connectivity::Components(1));
        assert_eq!(check_connectivity(&policy, Action::new(2, 2)), Connectivity::Empty);
        let report = decision_regions(&policy);
        let total: f64 = report.regions.iter().map(|r| r.volume).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let measured: f64 = report.regions.iter().map(|r| r.measure).sum();
        assert!((measured - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_contact_does_not_connect() {
        let grid = line_grid(5);
        let a = Action::new(2, 3);
        let z = Action::new(2, 0);
        let mut choice = vec![z; 25];
        for i in [0, 1, 5, 18, 19, 24] {
            choice[i] = a;
        }
        // Diagonal neighbours touch only at a vertex, not a face.
        choice[12] = a;
        let policy = Policy::from_choices(grid, choice).unwrap();
        assert_eq!(check_connectivity(&policy, a), Connectivity::Components(3));
        assert_eq!(check_connectivity(&policy, z), Connectivity::Components(1));
    }

    #[test]
    fn convexity_flags_a_concave_bump() {
        let grid = build_grid(&reference_spec(), 11).unwrap();
        let affine = ValueFunction::from_fn(grid.clone(), |p| 2.0 * p[0] - p[1] + 0.5 * p[2]);
        let r = check_convexity(&affine, CONVEXITY_TOL);
        assert!(r.pass);
        let mut bumped = ValueFunction::from_fn(grid.clone(), |p| p[0] * p[0]);
        let target = grid.index_of(&[0.5, 0.5, 0.5]).unwrap();
        bumped.values[target] += 0.1;
        let r = check_convexity(&bumped, CONVEXITY_TOL);
        assert!(!r.pass);
        assert_eq!(r.worst_point, vec![0.5, 0.5, 0.5]);
        assert!(!check_monotonicity(&ValueFunction::from_fn(grid, |p| -p[1]), MONOTONICITY_TOL).pass);
    }

    #[test]
    fn perturbed_field_fails_symmetry() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 5).unwrap();
        let sym = ValueFunction::from_fn(grid.clone(), |p| p.iter().map(|x| x * x).sum());
        assert!(check_symmetry(&spec, &sym, SYMMETRY_TOL).unwrap().pass);
        let mut bad = sym.clone();
        let i = grid.index_of(&[0.5, 0.0, 1.0]).unwrap();
        bad.values[i] += 1e-3;
        let r = check_symmetry(&spec, &bad, SYMMETRY_TOL).unwrap();
        assert!(!r.pass);
        assert!(!r.failing.is_empty() && r.failing.len() < 6);
        assert!(!r.failing.contains(&vec![0, 1, 2]));
        let skew = BeliefGrid::from_axes(vec![vec![0.0, 0.1, 0.9, 1.0], vec![0.0, 0.1, 0.5, 0.9, 1.0], vec![0.0, 0.1, 0.9, 1.0]])
            .unwrap();
        assert_eq!(check_symmetry(&spec, &ValueFunction::zeros(skew), 1e-9), Err(Error::AsymmetricGrid));
    }

    #[test]
    fn two_channel_symmetry_uses_two_permutations() {
        let mut spec = reference_spec();
        spec.rewards = crate::model::RewardSchedule::new(vec![3.0, 2.0], vec![1.5, 1.0]);
        let grid = build_grid(&spec, 6).unwrap();
        let (v, _) = value_iterate(&spec, &grid, 1e-9).unwrap();
        let r = check_symmetry(&spec, &v, SYMMETRY_TOL).unwrap();
        assert_eq!(r.permutations_checked, 2);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn beta_zero_idle_region_is_where_every_reward_is_nonpositive() {
        let mut spec = reference_spec();
        spec.beta = 0.0;
        let grid = build_grid(&spec, 11).unwrap();
        let (v, _) = value_iterate(&spec, &grid, 1e-9).unwrap();
        let policy = extract_policy(&spec, &v, DEFAULT_TIE_EPSILON).unwrap();
        for i in 0..grid.len() {
            let p = grid.point(i);
            let best = enumerate_actions(3)
                .into_iter()
                .skip(1)
                .map(|a| crate::model::immediate_reward(&spec, a, &p))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(policy.choice[i] == Action::none(3), best <= DEFAULT_TIE_EPSILON, "{p:?}");
        }
    }
}
