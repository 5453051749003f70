//! Interpolation-free solver on the truncated reachable belief set.
//!
//! From a start belief, every channel's belief is always one of
//! `T^n(lambda0)`, `T^n(lambda1)` or `T^n(p0_j)`. Orbits are followed for
//! `n_trunc` steps and then snapped to the stationary belief, which moves any
//! coordinate by at most `sigma^(n_trunc + 1)`. The product of the per-channel
//! alphabets is a finite MDP that is solved exactly.

use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::math::abs;
use crate::model::{
    enumerate_actions, immediate_reward, stationary_belief, validate_spec, Action, Belief,
    ProblemSpec,
};
use crate::solver::{SolveStats, ValueIteration};
use crate::{Error, Result, MAX_CHANNELS};

/// Default cap on the product state count.
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

/// Per-channel belief alphabet with its one-step propagation map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachableSet {
    pub n_channels: usize,
    pub n_trunc: u32,
    /// Sorted, distinct member beliefs.
    pub alphabet: Vec<f64>,
    /// `next[i]`: member index of `T(alphabet[i])`, or of the stationary
    /// belief once an orbit is truncated.
    pub next: Vec<usize>,
    pub lambda0_idx: usize,
    pub lambda1_idx: usize,
    pub stationary_idx: usize,
}

impl ReachableSet {
    pub fn n_states(&self) -> usize {
        self.alphabet.len().pow(self.n_channels as u32)
    }

    pub fn member(&self, value: f64) -> Option<usize> {
        self.alphabet.binary_search_by(|x| x.total_cmp(&value)).ok()
    }

    /// Closest member to `value`.
    pub fn nearest_member(&self, value: f64) -> usize {
        let upper = self.alphabet.partition_point(|&x| x < value);
        if upper == 0 {
            return 0;
        }
        if upper == self.alphabet.len() {
            return upper - 1;
        }
        if value - self.alphabet[upper - 1] <= self.alphabet[upper] - value {
            upper - 1
        } else {
            upper
        }
    }

    pub fn state_of(&self, members: &[usize]) -> usize {
        members.iter().fold(0, |acc, &m| acc * self.alphabet.len() + m)
    }

    pub fn members_of(&self, mut state: usize, out: &mut [usize]) {
        let m = self.alphabet.len();
        for j in (0..self.n_channels).rev() {
            out[j] = state % m;
            state /= m;
        }
    }
}

pub fn build_reachable_set(spec: &ProblemSpec, p0: &Belief, n_trunc: u32) -> Result<ReachableSet> {
    if n_trunc < 1 {
        return Err(Error::InvalidArgument("truncation depth must be at least 1".into()));
    }
    let n = spec.n_channels();
    if p0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: p0.len() });
    }
    let params = &spec.channel;
    let stationary = stationary_belief(params).map_err(|_| {
        Error::InvalidArgument("truncation needs a stationary belief (lambda0 = 0, lambda1 = 1)".into())
    })?;
    let mut values = vec![stationary];
    let mut seeds = vec![params.lambda0, params.lambda1];
    seeds.extend_from_slice(p0.coords());
    for seed in seeds {
        let mut x = seed;
        for step in 0..=n_trunc {
            values.push(x);
            if step < n_trunc {
                x = params.propagate(x);
            }
        }
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let find = |v: f64| values.binary_search_by(|x| x.total_cmp(&v)).ok();
    let stationary_idx = find(stationary).expect("stationary belief is a member");
    // Orbit members at depth n_trunc have no member successor and snap.
    let mut depth_cut = vec![false; values.len()];
    for seed in [params.lambda0, params.lambda1].into_iter().chain(p0.coords().iter().copied()) {
        let mut x = seed;
        for _ in 0..n_trunc {
            x = params.propagate(x);
        }
        if let Some(i) = find(x) {
            depth_cut[i] = true;
        }
    }
    let next = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == stationary_idx {
                return stationary_idx;
            }
            match find(params.propagate(v)) {
                Some(j) if !depth_cut[i] || j == stationary_idx => j,
                Some(j) => j,
                None => stationary_idx,
            }
        })
        .collect();
    Ok(ReachableSet {
        n_channels: n,
        n_trunc,
        lambda0_idx: find(params.lambda0).expect("lambda0 is a member"),
        lambda1_idx: find(params.lambda1).expect("lambda1 is a member"),
        stationary_idx,
        alphabet: values,
        next,
    })
}

/// Exact solution of the truncated reachable MDP.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachableSolution {
    pub set: ReachableSet,
    pub values: Vec<f64>,
    pub policy: Vec<Action>,
    pub start_state: usize,
    pub value_at_start: f64,
    pub stats: SolveStats,
}

impl ReachableSolution {
    /// Greedy action at a belief, reading each coordinate at its nearest
    /// alphabet member (exact for beliefs generated by the dynamics).
    pub fn action_at(&self, p: &[f64]) -> Action {
        let mut members = [0usize; MAX_CHANNELS];
        for (j, &x) in p.iter().enumerate() {
            members[j] = self.set.nearest_member(x);
        }
        self.policy[self.set.state_of(&members[..p.len()])]
    }
}

struct ReachableEvaluator<'a> {
    spec: &'a ProblemSpec,
    set: &'a ReachableSet,
    actions: Vec<Action>,
}

impl ReachableEvaluator<'_> {
    fn q(&self, values: &[f64], members: &[usize], a: Action) -> f64 {
        let n = self.set.n_channels;
        let mut p = [0.0; MAX_CHANNELS];
        let mut succ = [0usize; MAX_CHANNELS];
        let mut used = [0usize; MAX_CHANNELS];
        let mut k = 0;
        for j in 0..n {
            p[j] = self.set.alphabet[members[j]];
            if a.uses(j) {
                used[k] = j;
                k += 1;
            } else {
                succ[j] = self.set.next[members[j]];
            }
        }
        let g = immediate_reward(self.spec, a, &p[..n]);
        let mut future = 0.0;
        for pattern in 0..(1usize << k) {
            let mut prob = 1.0;
            for (i, &j) in used[..k].iter().enumerate() {
                if pattern >> (k - 1 - i) & 1 == 1 {
                    prob *= p[j];
                    succ[j] = self.set.lambda1_idx;
                } else {
                    prob *= 1.0 - p[j];
                    succ[j] = self.set.lambda0_idx;
                }
            }
            if prob > 0.0 {
                future += prob * values[self.set.state_of(&succ[..n])];
            }
        }
        g + self.spec.beta * future
    }

    fn best(&self, values: &[f64], state: usize) -> (f64, Action) {
        let mut members = [0usize; MAX_CHANNELS];
        let n = self.set.n_channels;
        self.set.members_of(state, &mut members[..n]);
        let mut best = (f64::NEG_INFINITY, self.actions[0]);
        for &a in &self.actions {
            let q = self.q(values, &members[..n], a);
            if q > best.0 {
                best = (q, a);
            }
        }
        best
    }
}

/// Value iteration on the product reachable set, with no interpolation.
pub fn solve_reachable(
    spec: &ProblemSpec,
    p0: &Belief,
    n_trunc: u32,
    epsilon: f64,
) -> Result<ReachableSolution> {
    solve_reachable_capped(spec, p0, n_trunc, epsilon, DEFAULT_STATE_CAP)
}

pub fn solve_reachable_capped(
    spec: &ProblemSpec,
    p0: &Belief,
    n_trunc: u32,
    epsilon: f64,
    state_cap: usize,
) -> Result<ReachableSolution> {
    let report = validate_spec(spec);
    if !report.is_valid() {
        return Err(Error::InvalidSpec(report));
    }
    let set = build_reachable_set(spec, p0, n_trunc)?;
    let states = set
        .alphabet
        .len()
        .checked_pow(spec.n_channels() as u32)
        .unwrap_or(usize::MAX);
    if states > state_cap {
        return Err(Error::StateSpaceTooLarge { states, cap: state_cap });
    }
    let vi = ValueIteration::new(epsilon);
    let threshold = vi.stopping_residual(spec.beta);
    let eval = ReachableEvaluator { spec, set: &set, actions: enumerate_actions(spec.n_channels()) };
    let mut current = vec![0.0; states];
    let mut next = vec![0.0; states];
    let mut residuals = Vec::new();
    loop {
        let mut worst = 0.0f64;
        for s in 0..states {
            next[s] = eval.best(&current, s).0;
            worst = worst.max(abs(next[s] - current[s]));
        }
        residuals.push(worst);
        core::mem::swap(&mut current, &mut next);
        if worst <= threshold {
            break;
        }
        if residuals.len() >= vi.max_iterations {
            return Err(Error::NonConvergence { iterations: residuals.len(), residual: worst });
        }
    }
    let policy = (0..states).map(|s| eval.best(&current, s).1).collect();
    let mut members = [0usize; MAX_CHANNELS];
    for (j, &x) in p0.coords().iter().enumerate() {
        members[j] = set.member(x).expect("start coordinates are members");
    }
    let start_state = set.state_of(&members[..spec.n_channels()]);
    let stats = SolveStats {
        iterations: residuals.len(),
        residual: *residuals.last().unwrap_or(&0.0),
        residuals,
    };
    Ok(ReachableSolution {
        value_at_start: current[start_state],
        set,
        values: current,
        policy,
        start_state,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_spec, ChannelParams};

    #[test]
    fn alphabet_contains_short_orbits() {
        let spec = reference_spec();
        let p0 = Belief::new(vec![0.9; 3]).unwrap();
        let set = build_reachable_set(&spec, &p0, 1).unwrap();
        for v in [0.1, 0.9, 0.18, 0.82, 0.5] {
            assert!(set.alphabet.iter().any(|&x| (x - v).abs() < 1e-15), "missing {v}");
        }
        assert!(set.alphabet.len() <= 2 * 2 + 1 + 3);
    }

    #[test]
    fn memoryless_channels_collapse() {
        let mut spec = reference_spec();
        spec.channel = ChannelParams { lambda0: 0.4, lambda1: 0.4 };
        let p0 = Belief::new(vec![0.2, 0.4, 0.7]).unwrap();
        let set = build_reachable_set(&spec, &p0, 5).unwrap();
        assert_eq!(set.alphabet, vec![0.2, 0.4, 0.7]);
        let i = set.member(0.4).unwrap();
        assert!(set.next.iter().all(|&j| j == i));
    }

    #[test]
    fn alphabet_size_bound() {
        let spec = reference_spec();
        let p0 = Belief::new(vec![0.9, 0.1, 0.5]).unwrap();
        for n in [1, 3, 10] {
            let set = build_reachable_set(&spec, &p0, n).unwrap();
            assert!(set.alphabet.len() <= 2 * (n as usize + 1) + 1 + 3);
        }
    }

    #[test]
    fn identity_channels_are_rejected() {
        let mut spec = reference_spec();
        spec.channel = ChannelParams { lambda0: 0.0, lambda1: 1.0 };
        let p0 = Belief::new(vec![0.5; 3]).unwrap();
        assert!(build_reachable_set(&spec, &p0, 4).is_err());
    }

    #[test]
    fn propagation_map_follows_orbits() {
        let spec = reference_spec();
        let p0 = Belief::new(vec![0.9; 3]).unwrap();
        let set = build_reachable_set(&spec, &p0, 6).unwrap();
        let mut i = set.lambda0_idx;
        let mut x = 0.1;
        for _ in 0..6 {
            i = set.next[i];
            x = spec.channel.propagate(x);
            assert_eq!(set.alphabet[i], x);
        }
        assert_eq!(set.next[i], set.stationary_idx);
    }

    #[test]
    fn memoryless_value_matches_closed_form() {
        // With lambda0 = lambda1 = q every belief after the first step is q,
        // so V(p0) = max_a [g_a(p0) + beta V*(q)] with V*(q) = max_a g_a(q) / (1 - beta).
        let mut spec = reference_spec();
        spec.channel = ChannelParams { lambda0: 0.7, lambda1: 0.7 };
        let p0 = Belief::new(vec![0.7; 3]).unwrap();
        let eps = 1e-9;
        let sol = solve_reachable(&spec, &p0, 3, eps).unwrap();
        let best = enumerate_actions(3)
            .into_iter()
            .map(|a| immediate_reward(&spec, a, &[0.7; 3]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((sol.value_at_start - best / (1.0 - spec.beta)).abs() <= eps);
    }

    #[test]
    fn beta_zero_is_myopic() {
        let mut spec = reference_spec();
        spec.beta = 0.0;
        let p0 = Belief::new(vec![0.3, 0.8, 0.6]).unwrap();
        let sol = solve_reachable(&spec, &p0, 2, 1e-9).unwrap();
        let best = enumerate_actions(3)
            .into_iter()
            .map(|a| immediate_reward(&spec, a, p0.coords()))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sol.value_at_start, best);
    }

    #[test]
    fn state_cap_is_enforced() {
        let spec = reference_spec();
        let p0 = Belief::new(vec![0.9; 3]).unwrap();
        let err = solve_reachable_capped(&spec, &p0, 10, 1e-6, 100).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { cap: 100, .. }));
    }
}
