//! Problem instances, belief dynamics, immediate rewards, and successor
//! enumeration.
//!
//! Channel `j` (0-based) of an `N`-channel action is bit `N-1-j` of the mask,
//! so `(a_1, ..., a_N)` reads as a binary number with `a_1` most significant
//! and ascending masks enumerate actions in the natural tuple order.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math::powi;
use crate::{Error, Result, MAX_CHANNELS};

/// Transition probabilities of one Gilbert-Elliott channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Pr[good | previously bad].
    pub lambda0: f64,
    /// Pr[good | previously good].
    pub lambda1: f64,
}

impl ChannelParams {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        let params = Self { lambda0, lambda1 };
        let mut violations = Vec::new();
        params.check(&mut violations);
        if violations.is_empty() {
            Ok(params)
        } else {
            Err(Error::InvalidSpec(ValidationReport { violations }))
        }
    }

    pub fn sigma(&self) -> f64 {
        self.lambda1 - self.lambda0
    }

    /// One-step belief of an unobserved channel, without range checks.
    #[inline]
    pub fn propagate(&self, p: f64) -> f64 {
        self.sigma() * p + self.lambda0
    }

    /// `true` when both states are absorbing and beliefs never move.
    pub fn is_identity(&self) -> bool {
        self.lambda0 == 0.0 && self.lambda1 == 1.0
    }

    fn check(&self, out: &mut Vec<Violation>) {
        for (name, value) in [("lambda0", self.lambda0), ("lambda1", self.lambda1)] {
            if !value.is_finite() {
                out.push(Violation::NonFinite { field: name });
            } else if !(0.0..=1.0).contains(&value) {
                out.push(Violation::ProbabilityOutOfRange { field: name, value });
            }
        }
        if self.lambda0 > self.lambda1 {
            out.push(Violation::NegativeCorrelation {
                lambda0: self.lambda0,
                lambda1: self.lambda1,
            });
        }
    }
}

/// Per-channel reward `R[k]` and penalty `C[k]` when `k` channels share the
/// power budget. Index 0 holds `k = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSchedule {
    pub n_channels: usize,
    pub rewards: Vec<f64>,
    pub penalties: Vec<f64>,
}

impl RewardSchedule {
    pub fn new(rewards: Vec<f64>, penalties: Vec<f64>) -> Self {
        Self { n_channels: rewards.len(), rewards, penalties }
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// `R[k]` for `1 <= k <= N`.
    #[inline]
    pub fn reward(&self, k: usize) -> f64 {
        self.rewards[k - 1]
    }

    /// `C[k]` for `1 <= k <= N`.
    #[inline]
    pub fn penalty(&self, k: usize) -> f64 {
        self.penalties[k - 1]
    }

    fn check(&self, out: &mut Vec<Violation>) {
        let n = self.n_channels;
        let mut lengths_ok = true;
        for (field, values) in [("R", &self.rewards), ("C", &self.penalties)] {
            if values.len() != n {
                out.push(Violation::LengthMismatch { field, expected: n, found: values.len() });
                lengths_ok = false;
            }
        }
        if !lengths_ok {
            return;
        }
        let mut finite = true;
        for (field, values) in [("R", &self.rewards), ("C", &self.penalties)] {
            if values.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { field });
                finite = false;
            }
        }
        if !finite {
            return;
        }
        for k in 1..=n {
            if self.penalty(k) <= 0.0 {
                out.push(Violation::PenaltyNotPositive { k, value: self.penalty(k) });
            }
            if self.reward(k) <= self.penalty(k) {
                out.push(Violation::RewardNotAbovePenalty {
                    k,
                    reward: self.reward(k),
                    penalty: self.penalty(k),
                });
            }
        }
        for (series, values) in [(Series::Reward, &self.rewards), (Series::Penalty, &self.penalties)] {
            for k1 in 1..=n {
                for k2 in (k1 + 1)..=n {
                    let (v1, v2) = (values[k1 - 1], values[k2 - 1]);
                    if v2 >= v1 {
                        out.push(Violation::NotDecreasing { series, k1, k2 });
                    }
                    if v1 * k1 as f64 >= k2 as f64 * v2 {
                        out.push(Violation::NotSubproportional { series, k1, k2 });
                    }
                }
            }
        }
    }
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ProblemSpecJson", from = "ProblemSpecJson")]
pub struct ProblemSpec {
    pub channel: ChannelParams,
    pub rewards: RewardSchedule,
    pub beta: f64,
    /// Nominal total power `P`. Carried for bookkeeping; each used channel
    /// always receives `P / k`, so only `k` enters the rewards.
    pub total_power: f64,
}

impl ProblemSpec {
    pub fn new(channel: ChannelParams, rewards: RewardSchedule, beta: f64) -> Self {
        Self { channel, rewards, beta, total_power: 1.0 }
    }

    pub fn n_channels(&self) -> usize {
        self.rewards.n_channels()
    }

    /// Returns `self` if [`validate_spec`] reports nothing.
    pub fn validated(self) -> Result<Self> {
        let report = validate_spec(&self);
        if report.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidSpec(report))
        }
    }

    /// Envelope on any discounted reward: `[-N C[1], N R[1]] / (1 - beta)`.
    pub fn value_bounds(&self) -> (f64, f64) {
        let n = self.n_channels() as f64;
        let scale = 1.0 / (1.0 - self.beta);
        (
            -n * self.rewards.penalty(1) * scale,
            n * self.rewards.reward(1) * scale,
        )
    }
}

/// JSON wire layout of a [`ProblemSpec`].
#[derive(Serialize, Deserialize)]
struct ProblemSpecJson {
    n: usize,
    lambda0: f64,
    lambda1: f64,
    beta: f64,
    #[serde(rename = "R")]
    rewards: Vec<f64>,
    #[serde(rename = "C")]
    penalties: Vec<f64>,
    #[serde(default = "default_total_power")]
    total_power: f64,
}

fn default_total_power() -> f64 {
    1.0
}

impl From<ProblemSpec> for ProblemSpecJson {
    fn from(spec: ProblemSpec) -> Self {
        Self {
            n: spec.n_channels(),
            lambda0: spec.channel.lambda0,
            lambda1: spec.channel.lambda1,
            beta: spec.beta,
            rewards: spec.rewards.rewards,
            penalties: spec.rewards.penalties,
            total_power: spec.total_power,
        }
    }
}

impl From<ProblemSpecJson> for ProblemSpec {
    fn from(json: ProblemSpecJson) -> Self {
        Self {
            channel: ChannelParams { lambda0: json.lambda0, lambda1: json.lambda1 },
            rewards: RewardSchedule {
                n_channels: json.n,
                rewards: json.rewards,
                penalties: json.penalties,
            },
            beta: json.beta,
            total_power: json.total_power,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Series {
    Reward,
    Penalty,
}

impl Series {
    fn symbol(self) -> &'static str {
        match self {
            Series::Reward => "R",
            Series::Penalty => "C",
        }
    }
}

/// One broken assumption of a problem instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NoChannels,
    TooManyChannels { n: usize, max: usize },
    LengthMismatch { field: &'static str, expected: usize, found: usize },
    NonFinite { field: &'static str },
    ProbabilityOutOfRange { field: &'static str, value: f64 },
    NegativeCorrelation { lambda0: f64, lambda1: f64 },
    DiscountOutOfRange { beta: f64 },
    TotalPowerNotPositive { value: f64 },
    PenaltyNotPositive { k: usize, value: f64 },
    RewardNotAbovePenalty { k: usize, reward: f64, penalty: f64 },
    /// `X[k2] < X[k1]` fails.
    NotDecreasing { series: Series, k1: usize, k2: usize },
    /// `X[k1] < (k2/k1) X[k2]` fails.
    NotSubproportional { series: Series, k1: usize, k2: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoChannels => write!(f, "n >= 1 violated"),
            Violation::TooManyChannels { n, max } => write!(f, "n <= {max} violated (n = {n})"),
            Violation::LengthMismatch { field, expected, found } => {
                write!(f, "len({field}) = n violated ({found} != {expected})")
            }
            Violation::NonFinite { field } => write!(f, "{field} must be finite"),
            Violation::ProbabilityOutOfRange { field, value } => {
                write!(f, "0 <= {field} <= 1 violated ({field} = {value})")
            }
            Violation::NegativeCorrelation { lambda0, lambda1 } => {
                write!(f, "lambda0 <= lambda1 violated ({lambda0} > {lambda1})")
            }
            Violation::DiscountOutOfRange { beta } => {
                write!(f, "0 <= beta < 1 violated (beta = {beta})")
            }
            Violation::TotalPowerNotPositive { value } => {
                write!(f, "total_power > 0 violated ({value})")
            }
            Violation::PenaltyNotPositive { k, value } => {
                write!(f, "C[{k}] > 0 violated (C[{k}] = {value})")
            }
            Violation::RewardNotAbovePenalty { k, reward, penalty } => {
                write!(f, "R[{k}] > C[{k}] violated ({reward} <= {penalty})")
            }
            Violation::NotDecreasing { series, k1, k2 } => {
                let s = series.symbol();
                write!(f, "{s}[{k2}] < {s}[{k1}] violated")
            }
            Violation::NotSubproportional { series, k1, k2 } => {
                let s = series.symbol();
                write!(f, "{s}[{k1}] < ({k2}/{k1})*{s}[{k2}] violated")
            }
        }
    }
}

/// Every invariant a [`ProblemSpec`] breaks; empty when valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_spec(spec: &ProblemSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let n = spec.n_channels();
    if n == 0 {
        violations.push(Violation::NoChannels);
    } else if n > MAX_CHANNELS {
        violations.push(Violation::TooManyChannels { n, max: MAX_CHANNELS });
    }
    spec.channel.check(&mut violations);
    if !spec.beta.is_finite() {
        violations.push(Violation::NonFinite { field: "beta" });
    } else if !(0.0..1.0).contains(&spec.beta) {
        violations.push(Violation::DiscountOutOfRange { beta: spec.beta });
    }
    if !(spec.total_power > 0.0) || !spec.total_power.is_finite() {
        violations.push(Violation::TotalPowerNotPositive { value: spec.total_power });
    }
    spec.rewards.check(&mut violations);
    ValidationReport { violations }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(p))
    }
}

/// `T(p) = sigma p + lambda0`.
pub fn propagate_belief(params: &ChannelParams, p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(params.propagate(p))
}

/// `T^n(p)` in closed form; the identity when `sigma = 1`.
pub fn propagate_belief_n(params: &ChannelParams, p: f64, n: u32) -> Result<f64> {
    check_probability(p)?;
    if n == 0 || params.is_identity() {
        return Ok(p);
    }
    let sigma = params.sigma();
    let sn = powi(sigma, n);
    let fixed = params.lambda0 / (1.0 - sigma);
    Ok(fixed * (1.0 - sn) + sn * p)
}

/// Fixed point `lambda0 / (1 - sigma)` of [`propagate_belief`].
pub fn stationary_belief(params: &ChannelParams) -> Result<f64> {
    if params.is_identity() {
        return Err(Error::NoStationaryBelief);
    }
    Ok(params.lambda0 / (1.0 - params.sigma()))
}

/// Channel-selection mask for an `n`-channel system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    n: u8,
    mask: u8,
}

impl Action {
    pub fn new(n: usize, mask: u32) -> Self {
        assert!((1..=MAX_CHANNELS).contains(&n), "channel count {n} out of range");
        assert!(mask < (1 << n), "mask {mask} too wide for {n} channels");
        Self { n: n as u8, mask: mask as u8 }
    }

    /// Action that uses the channels flagged in `used`, in channel order.
    pub fn from_channels(used: &[bool]) -> Self {
        let n = used.len();
        let mask = used
            .iter()
            .fold(0u32, |acc, &u| (acc << 1) | u as u32);
        Self::new(n, mask)
    }

    pub fn none(n: usize) -> Self {
        Self::new(n, 0)
    }

    pub fn all(n: usize) -> Self {
        Self::new(n, (1 << n) - 1)
    }

    pub fn n_channels(&self) -> usize {
        self.n as usize
    }

    pub fn mask(&self) -> u32 {
        self.mask as u32
    }

    /// Number of used channels `k`.
    pub fn cardinality(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Whether channel `j` (0-based) is used.
    #[inline]
    pub fn uses(&self, j: usize) -> bool {
        (self.mask >> (self.n as usize - 1 - j)) & 1 == 1
    }

    pub fn used_channels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n as usize).filter(move |&j| self.uses(j))
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.n as usize).map(|j| self.uses(j) as u8).collect()
    }

    /// The action that uses channel `perm[j]` whenever `self` uses channel
    /// `j`; pairs with [`Belief::permuted`].
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n as usize;
        let mut used = [false; MAX_CHANNELS];
        for j in 0..n {
            if self.uses(j) {
                used[perm[j]] = true;
            }
        }
        Self::from_channels(&used[..n])
    }

    /// Ordering key of the deterministic tie-break: fewest channels, then
    /// smallest mask.
    #[inline]
    pub fn tie_break_key(&self) -> (u32, u32) {
        (self.mask.count_ones(), self.mask as u32)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for j in 0..self.n as usize {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", self.uses(j) as u8)?;
        }
        write!(f, ")")
    }
}

/// A set of actions of one channel count, as a bitset over masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct ActionSet(pub u64);

impl ActionSet {
    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.mask();
    }

    pub fn contains(&self, a: Action) -> bool {
        self.0 >> a.mask() & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self, n: usize) -> impl Iterator<Item = Action> + '_ {
        (0..(1u32 << n))
            .filter(move |&m| self.0 >> m & 1 == 1)
            .map(move |m| Action::new(n, m))
    }

    pub fn permuted(&self, n: usize, perm: &[usize]) -> Self {
        let mut out = ActionSet::default();
        for a in self.iter(n) {
            out.insert(a.permuted(perm));
        }
        out
    }
}

/// All `2^n` actions in ascending mask order.
pub fn enumerate_actions(n: usize) -> Vec<Action> {
    (0..(1u32 << n)).map(|m| Action::new(n, m)).collect()
}

/// Per-channel probabilities of being in the good state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        for &p in &coords {
            check_probability(p)?;
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Moves coordinate `j` to position `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.0.clone();
        for (j, &p) in self.0.iter().enumerate() {
            out[perm[j]] = p;
        }
        Self(out)
    }
}

impl AsRef<[f64]> for Belief {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Expected bits this slot:
/// `sum_{j used} p_j (R[k] + C[k]) - k C[k]`.
pub fn immediate_reward(spec: &ProblemSpec, action: Action, belief: &[f64]) -> f64 {
    let k = action.cardinality();
    if k == 0 {
        return 0.0;
    }
    let r = spec.rewards.reward(k);
    let c = spec.rewards.penalty(k);
    let good: f64 = action.used_channels().map(|j| belief[j]).sum();
    good * (r + c) - k as f64 * c
}

/// One successor of a belief under an action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub probability: f64,
    pub belief: Belief,
    /// Revealed states of the used channels, `true` = good, in channel order.
    pub revealed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub outcomes: Vec<Outcome>,
}

impl OutcomeDistribution {
    pub fn total_probability(&self) -> f64 {
        self.outcomes.iter().map(|o| o.probability).sum()
    }
}

/// Enumerates all `2^k` good/bad patterns of the used channels. Pattern bit
/// `i` is the state of the `i`-th used channel counted from the last, so
/// pattern 0 is all-bad and the last pattern is all-good. Zero-probability
/// outcomes are kept.
pub fn successor_outcomes(
    params: &ChannelParams,
    action: Action,
    belief: &Belief,
) -> Result<OutcomeDistribution> {
    let n = action.n_channels();
    if belief.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: belief.len() });
    }
    let used: Vec<usize> = action.used_channels().collect();
    let k = used.len();
    let mut base: Vec<f64> = belief.coords().iter().map(|&p| params.propagate(p)).collect();
    let mut outcomes = Vec::with_capacity(1 << k);
    for pattern in 0..(1usize << k) {
        let mut prob = 1.0;
        let mut revealed = Vec::with_capacity(k);
        for (i, &j) in used.iter().enumerate() {
            let good = pattern >> (k - 1 - i) & 1 == 1;
            let p = belief.coords()[j];
            prob *= if good { p } else { 1.0 - p };
            base[j] = if good { params.lambda1 } else { params.lambda0 };
            revealed.push(good);
        }
        outcomes.push(Outcome { probability: prob, belief: Belief(base.clone()), revealed });
    }
    Ok(OutcomeDistribution { outcomes })
}

/// Checked variant of [`immediate_reward`].
pub fn immediate_reward_checked(spec: &ProblemSpec, action: Action, belief: &Belief) -> Result<f64> {
    if belief.len() != spec.n_channels() || action.n_channels() != spec.n_channels() {
        return Err(Error::DimensionMismatch { expected: spec.n_channels(), found: belief.len() });
    }
    Ok(immediate_reward(spec, action, belief.coords()))
}

/// Parameters used throughout the examples and tests: `lambda1 = 0.9`,
/// `lambda0 = 0.1`, `beta = 0.9`, `R = (3, 2, 1.78)`, `C = (1.5, 1, 0.89)`.
pub fn reference_spec() -> ProblemSpec {
    ProblemSpec::new(
        ChannelParams { lambda0: 0.1, lambda1: 0.9 },
        RewardSchedule::new(alloc::vec![3.0, 2.0, 1.78], alloc::vec![1.5, 1.0, 0.89]),
        0.9,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
        crate::math::abs(a - b) <= tol
    }

    fn params() -> ChannelParams {
        ChannelParams { lambda0: 0.1, lambda1: 0.9 }
    }

    #[test]
    fn propagate_examples() {
        assert_eq!(propagate_belief(&params(), 0.0).unwrap(), 0.1);
        assert_eq!(propagate_belief(&params(), 1.0).unwrap(), 0.9);
        assert!(approx_eq(propagate_belief(&params(), 0.5).unwrap(), 0.5, 1e-15));
        assert!(matches!(propagate_belief(&params(), 1.5), Err(Error::ProbabilityOutOfRange(_))));
        assert!(propagate_belief(&params(), -0.01).is_err());
    }

    #[test]
    fn propagate_n_examples() {
        // T(T(0)) = T(0.1) = 0.8 * 0.1 + 0.1
        assert!(approx_eq(propagate_belief_n(&params(), 0.0, 2).unwrap(), 0.18, 1e-15));
        assert_eq!(propagate_belief_n(&params(), 0.3, 0).unwrap(), 0.3);
        assert!(approx_eq(propagate_belief_n(&params(), 0.0, 500).unwrap(), 0.5, 1e-15));
        let identity = ChannelParams { lambda0: 0.0, lambda1: 1.0 };
        assert_eq!(propagate_belief_n(&identity, 0.37, 9).unwrap(), 0.37);
    }

    #[test]
    fn stationary_examples() {
        assert!(approx_eq(stationary_belief(&params()).unwrap(), 0.5, 1e-15));
        assert_eq!(stationary_belief(&ChannelParams { lambda0: 0.3, lambda1: 0.3 }).unwrap(), 0.3);
        assert_eq!(stationary_belief(&ChannelParams { lambda0: 0.0, lambda1: 0.0 }).unwrap(), 0.0);
        assert_eq!(
            stationary_belief(&ChannelParams { lambda0: 0.0, lambda1: 1.0 }),
            Err(Error::NoStationaryBelief)
        );
    }

    #[test]
    fn immediate_reward_examples() {
        let spec = reference_spec();
        let all = Action::all(3);
        assert!(approx_eq(immediate_reward(&spec, all, &[1.0, 1.0, 1.0]), 5.34, 1e-12));
        assert_eq!(immediate_reward(&spec, Action::none(3), &[0.3, 0.9, 0.2]), 0.0);
        let first = Action::from_channels(&[true, false, false]);
        assert!(approx_eq(immediate_reward(&spec, first, &[0.5, 0.2, 0.9]), 0.75, 1e-12));
    }

    #[test]
    fn successor_examples() {
        let b = Belief::new(vec![0.5, 0.3, 0.7]).unwrap();
        let a = Action::from_channels(&[true, false, false]);
        let d = successor_outcomes(&params(), a, &b).unwrap();
        assert_eq!(d.outcomes.len(), 2);
        let bad = &d.outcomes[0];
        let good = &d.outcomes[1];
        assert!(approx_eq(bad.probability, 0.5, 1e-15));
        assert!(approx_eq(good.probability, 0.5, 1e-15));
        let expect_good = [0.9, 0.34, 0.66];
        let expect_bad = [0.1, 0.34, 0.66];
        for j in 0..3 {
            assert!(approx_eq(good.belief.coords()[j], expect_good[j], 1e-15));
            assert!(approx_eq(bad.belief.coords()[j], expect_bad[j], 1e-15));
        }

        let none = successor_outcomes(&params(), Action::none(3), &b).unwrap();
        assert_eq!(none.outcomes.len(), 1);
        assert_eq!(none.outcomes[0].probability, 1.0);
        assert!(approx_eq(none.outcomes[0].belief.coords()[1], 0.34, 1e-15));

        let ones = Belief::new(vec![1.0; 3]).unwrap();
        let d = successor_outcomes(&params(), Action::all(3), &ones).unwrap();
        assert_eq!(d.outcomes.len(), 8);
        for o in &d.outcomes[..7] {
            assert_eq!(o.probability, 0.0);
        }
        assert_eq!(d.outcomes[7].probability, 1.0);
        assert_eq!(d.outcomes[7].belief.coords(), &[0.9, 0.9, 0.9]);
    }

    #[test]
    fn action_enumeration() {
        let one = enumerate_actions(1);
        assert_eq!(one.iter().map(|a| a.to_bits()).collect::<Vec<_>>(), vec![vec![0], vec![1]]);
        assert_eq!(enumerate_actions(3).len(), 8);
        let two: Vec<_> = enumerate_actions(2).iter().map(|a| a.to_bits()).collect();
        assert_eq!(two, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(alloc::format!("{}", Action::new(3, 4)), "(1,0,0)");
    }

    #[test]
    fn action_permutation_matches_belief_permutation() {
        let a = Action::from_channels(&[true, false, true]);
        let perm = [2, 0, 1];
        assert_eq!(a.permuted(&perm).to_bits(), vec![0, 1, 1]);
        let b = Belief::new(vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(b.permuted(&perm).coords(), &[0.2, 0.3, 0.1]);
    }

    #[test]
    fn validation_examples() {
        assert!(validate_spec(&reference_spec()).is_valid());

        let mut flat = reference_spec();
        flat.rewards.rewards = vec![3.0, 3.0, 3.0];
        let report = validate_spec(&flat);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotDecreasing { series: Series::Reward, .. })));
        assert!(alloc::format!("{report}").contains("R[2] < R[1]"));

        let mut swapped = reference_spec();
        swapped.channel = ChannelParams { lambda0: 0.9, lambda1: 0.1 };
        let report = validate_spec(&swapped);
        assert!(alloc::format!("{report}").contains("lambda0 <= lambda1"));

        let mut zero_penalty = reference_spec();
        zero_penalty.rewards.penalties[2] = 0.0;
        assert!(validate_spec(&zero_penalty)
            .violations
            .iter()
            .any(|v| matches!(v, Violation::PenaltyNotPositive { k: 3, .. })));

        let mut bad_beta = reference_spec();
        bad_beta.beta = 1.0;
        assert!(!validate_spec(&bad_beta).is_valid());
    }

    #[test]
    fn json_layout() {
        let spec = reference_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["n", "lambda0", "lambda1", "beta", "R", "C", "total_power"] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(value["n"], 3);
        let back: ProblemSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);

        let minimal = r#"{"n":2,"lambda0":0.2,"lambda1":0.8,"beta":0.5,"R":[2,1.5],"C":[1,0.6]}"#;
        let parsed: ProblemSpec = serde_json::from_str(minimal).unwrap();
        assert_eq!(parsed.total_power, 1.0);
        assert!(validate_spec(&parsed).is_valid());

        let short = r#"{"n":3,"lambda0":0.2,"lambda1":0.8,"beta":0.5,"R":[2,1.5],"C":[1,0.6]}"#;
        let parsed: ProblemSpec = serde_json::from_str(short).unwrap();
        assert!(!validate_spec(&parsed).is_valid());
    }
}
