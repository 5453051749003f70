//! Monte Carlo evaluation of policies against simulated channel states.
//!
//! Every episode draws from its own ChaCha8 stream `(seed, episode)`, so
//! results do not depend on how episodes are scheduled across threads.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::math::{pairwise_sum, powi, sqrt};
use crate::model::{enumerate_actions, immediate_reward, validate_spec, Action, ActionSet, Belief, ChannelParams, ProblemSpec};
use crate::reachable::ReachableSolution;
use crate::solver::{tie_break, Policy, DEFAULT_TIE_EPSILON};
use crate::{Error, Result};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.5758293035489004;

pub type EpisodeRng = ChaCha8Rng;

/// Independent stream for one episode.
pub fn episode_rng(seed: u64, episode: u64) -> EpisodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// True good (`true`) or bad state of every channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrueChannelState(pub Vec<bool>);

impl TrueChannelState {
    /// Each channel good with probability `p0[i]`.
    pub fn sample(p0: &[f64], rng: &mut impl Rng) -> Self {
        Self(p0.iter().map(|&p| bernoulli(rng, p)).collect())
    }
}

#[inline]
fn bernoulli(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// One slot of channel evolution: good stays good with probability
/// `lambda1`, bad turns good with probability `lambda0`.
pub fn step_channels(params: &ChannelParams, state: &TrueChannelState, rng: &mut impl Rng) -> TrueChannelState {
    TrueChannelState(
        state
            .0
            .iter()
            .map(|&good| bernoulli(rng, if good { params.lambda1 } else { params.lambda0 }))
            .collect(),
    )
}

/// Anything that maps a belief to an action.
pub trait PolicyLookup: Sync {
    fn name(&self) -> &str;
    fn action(&self, belief: &[f64], rng: &mut EpisodeRng) -> Action;
}

impl PolicyLookup for Policy {
    fn name(&self) -> &str {
        "optimal"
    }

    fn action(&self, belief: &[f64], _: &mut EpisodeRng) -> Action {
        self.action_at(belief)
    }
}

impl PolicyLookup for ReachableSolution {
    fn name(&self) -> &str {
        "optimal_reachable"
    }

    fn action(&self, belief: &[f64], _: &mut EpisodeRng) -> Action {
        self.action_at(belief)
    }
}

/// Maximizes the immediate reward only.
#[derive(Debug, Clone)]
pub struct Myopic {
    spec: ProblemSpec,
    actions: Vec<Action>,
}

pub fn myopic_policy(spec: &ProblemSpec) -> Myopic {
    Myopic { spec: spec.clone(), actions: enumerate_actions(spec.n_channels()) }
}

impl Myopic {
    pub fn choose(&self, belief: &[f64]) -> Action {
        let g: Vec<f64> = self.actions.iter().map(|&a| immediate_reward(&self.spec, a, belief)).collect();
        let best = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut set = ActionSet::default();
        for (&a, &q) in self.actions.iter().zip(&g) {
            if q >= best - DEFAULT_TIE_EPSILON {
                set.insert(a);
            }
        }
        tie_break(set, self.spec.n_channels()).expect("nonempty")
    }
}

impl PolicyLookup for Myopic {
    fn name(&self) -> &str {
        "myopic"
    }

    fn action(&self, belief: &[f64], _: &mut EpisodeRng) -> Action {
        self.choose(belief)
    }
}

/// Fixed comparison policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    AllOn,
    /// The channel with the largest belief, ties to the lowest index.
    BestSingle,
    UniformRandom,
    None,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::AllOn, Baseline::BestSingle, Baseline::UniformRandom, Baseline::None];

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.label() == name)
    }

    pub fn label(self) -> &'static str {
        match self {
            Baseline::AllOn => "all_on",
            Baseline::BestSingle => "best_single",
            Baseline::UniformRandom => "uniform_random",
            Baseline::None => "none",
        }
    }

    pub fn choose(self, belief: &[f64], rng: &mut impl Rng) -> Action {
        let n = belief.len();
        match self {
            Baseline::AllOn => Action::all(n),
            Baseline::None => Action::none(n),
            Baseline::BestSingle => {
                let mut best = 0;
                for (j, &p) in belief.iter().enumerate() {
                    if p > belief[best] {
                        best = j;
                    }
                }
                Action::new(n, 1 << (n - 1 - best))
            }
            Baseline::UniformRandom => Action::new(n, rng.random_range(0..1u32 << n)),
        }
    }
}

impl PolicyLookup for Baseline {
    fn name(&self) -> &str {
        self.label()
    }

    fn action(&self, belief: &[f64], rng: &mut EpisodeRng) -> Action {
        self.choose(belief, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub belief: Vec<f64>,
    pub action: Action,
    /// True state of each used channel; `None` for unused ones.
    pub revealed: Vec<Option<bool>>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub discounted_reward: f64,
    pub log: Option<Vec<StepLog>>,
}

/// Simulates `horizon` slots from true states drawn from `p0`, tracking the
/// belief exactly from the revealed states.
pub fn run_episode(
    spec: &ProblemSpec,
    policy: &dyn PolicyLookup,
    p0: &Belief,
    horizon: usize,
    rng: &mut EpisodeRng,
    trace: bool,
) -> Result<EpisodeResult> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n = spec.n_channels();
    if p0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: p0.len() });
    }
    let params = &spec.channel;
    let mut state = TrueChannelState::sample(p0.coords(), rng);
    let mut belief = p0.coords().to_vec();
    let mut log = trace.then(Vec::new);
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let action = policy.action(&belief, rng);
        let k = action.cardinality();
        let mut reward = 0.0;
        let mut revealed = vec![None; n];
        for j in 0..n {
            if action.uses(j) {
                let good = state.0[j];
                reward += if good { spec.rewards.reward(k) } else { -spec.rewards.penalty(k) };
                revealed[j] = Some(good);
            }
        }
        if let Some(log) = log.as_mut() {
            log.push(StepLog { belief: belief.clone(), action, revealed: revealed.clone(), reward });
        }
        total += discount * reward;
        discount *= spec.beta;
        for j in 0..n {
            belief[j] = match revealed[j] {
                Some(true) => params.lambda1,
                Some(false) => params.lambda0,
                None => params.propagate(belief[j]),
            };
        }
        state = step_channels(params, &state, rng);
    }
    Ok(EpisodeResult { discounted_reward: total, log })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvalSummary {
    pub policy_name: String,
    pub p0: Vec<f64>,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    /// Half-width of the 99% normal confidence interval.
    pub ci99: f64,
}

/// Mean discounted reward over `episodes` independent episodes.
pub fn evaluate_policy(
    spec: &ProblemSpec,
    policy: &dyn PolicyLookup,
    p0: &Belief,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<PolicyEvalSummary> {
    let report = validate_spec(spec);
    if !report.is_valid() {
        return Err(Error::InvalidSpec(report));
    }
    if episodes < 2 {
        return Err(Error::InvalidArgument("need at least 2 episodes".into()));
    }
    let run = |e: usize| -> Result<f64> {
        let mut rng = episode_rng(seed, e as u64);
        Ok(run_episode(spec, policy, p0, horizon, &mut rng, false)?.discounted_reward)
    };
    #[cfg(feature = "std")]
    let rewards: Vec<f64> = {
        use rayon::prelude::*;
        (0..episodes).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "std"))]
    let rewards: Vec<f64> = (0..episodes).map(run).collect::<Result<_>>()?;
    let n = episodes as f64;
    let mean = pairwise_sum(&rewards) / n;
    let squares: Vec<f64> = rewards.iter().map(|r| (r - mean) * (r - mean)).collect();
    let variance = pairwise_sum(&squares) / (n - 1.0);
    let stderr = sqrt(variance / n);
    Ok(PolicyEvalSummary {
        policy_name: policy.name().into(),
        p0: p0.coords().to_vec(),
        episodes,
        horizon,
        seed,
        mean,
        stderr,
        ci99: Z99 * stderr,
    })
}

/// Horizon after which the discounted tail `beta^h * scale / (1 - beta)`
/// drops below `tol`.
pub fn horizon_for(spec: &ProblemSpec, tol: f64) -> usize {
    let scale = spec.n_channels() as f64 * spec.rewards.reward(1) / (1.0 - spec.beta);
    let mut h = 1usize;
    while powi(spec.beta, h as u32) * scale > tol && h < 100_000 {
        h += 1;
    }
    h
}
