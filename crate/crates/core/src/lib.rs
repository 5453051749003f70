//! Optimal power allocation over `N` statistically identical Gilbert-Elliott
//! channels, posed as a discounted MDP over channel beliefs.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature enables
//! rayon-backed parallel sweeps; results are bitwise identical either way.
//!
//! Layout:
//! - [`model`]: problem instances, belief dynamics, rewards, successor outcomes.
//! - [`grid`]: belief grids and multilinear value functions.
//! - [`solver`]: value iteration on a grid and greedy policy extraction.
//! - [`reachable`]: the interpolation-free solver on the truncated reachable
//!   belief set.
//! - [`lp`]: the linear-programming view of the same fixed point, a dense
//!   revised simplex, and a CPLEX LP writer.
//! - [`analysis`]: decision regions and the structural checks on them.
//! - [`sim`]: Monte Carlo evaluation against true channel states.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
mod error;
pub mod grid;
pub mod lp;
mod math;
pub mod model;
pub mod reachable;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{BeliefGrid, ValueFunction};
pub use model::{
    Action, ActionSet, Belief, ChannelParams, OutcomeDistribution, ProblemSpec, RewardSchedule,
    ValidationReport, Violation,
};
pub use solver::{Policy, SolveStats, ValueIteration};

/// Largest channel count supported. Grids and action sets grow as `2^N`.
pub const MAX_CHANNELS: usize = 6;
