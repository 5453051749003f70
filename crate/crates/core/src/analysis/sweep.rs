//! Region volumes as one model parameter varies.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_contiguity_all, check_symmetry, decision_regions, SYMMETRY_TOL};
use crate::grid::build_grid;
use crate::model::{validate_spec, Action, ProblemSpec};
use crate::solver::{extract_policy, value_iterate, DEFAULT_TIE_EPSILON};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Lambda0,
    Lambda1,
    /// `C[k] = R[k] / value` for every `k`.
    RewardPenaltyRatio,
    /// `k R[k] = R[1] value^(k-1)`, so consecutive `(k+1) R[k+1] / (k R[k])`
    /// all equal `value`; penalties keep the template's `R[1] / C[1]`.
    RewardRatioK2K1,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Lambda0 => "lambda0",
            SweepParameter::Lambda1 => "lambda1",
            SweepParameter::RewardPenaltyRatio => "reward_penalty_ratio",
            SweepParameter::RewardRatioK2K1 => "reward_ratio_k2k1",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::Lambda0, Self::Lambda1, Self::RewardPenaltyRatio, Self::RewardRatioK2K1]
            .into_iter()
            .find(|p| p.name() == name)
    }
}

/// The template with `param` set to `value`. The result is not validated.
pub fn instantiate(template: &ProblemSpec, param: SweepParameter, value: f64) -> ProblemSpec {
    let mut spec = template.clone();
    match param {
        SweepParameter::Lambda0 => spec.channel.lambda0 = value,
        SweepParameter::Lambda1 => spec.channel.lambda1 = value,
        SweepParameter::RewardPenaltyRatio => {
            let rewards = spec.rewards.rewards.clone();
            spec.rewards.penalties = rewards.iter().map(|r| r / value).collect();
        }
        SweepParameter::RewardRatioK2K1 => {
            let r1 = template.rewards.reward(1);
            let ratio = r1 / template.rewards.penalty(1);
            let n = spec.rewards.n_channels();
            let mut scale = 1.0;
            for k in 1..=n {
                let r = r1 * scale / k as f64;
                spec.rewards.rewards[k - 1] = r;
                spec.rewards.penalties[k - 1] = r / ratio;
                scale *= value;
            }
        }
    }
    spec
}

/// `B_k`: the action using the first `k` channels, for `k = 0..=N`.
pub fn representatives(n: usize) -> Vec<Action> {
    (0..=n)
        .map(|k| Action::new(n, ((1u32 << k) - 1) << (n - k)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    pub resolution: usize,
    pub epsilon: f64,
    pub tie_epsilon: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { resolution: 15, epsilon: 1e-6, tie_epsilon: DEFAULT_TIE_EPSILON }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param_value: f64,
    /// Trapezoid-weighted volumes of `B_0..=B_N`.
    pub volumes: Vec<f64>,
    /// Fractions of grid points in `B_0..=B_N`.
    pub point_fractions: Vec<f64>,
    pub components: Vec<usize>,
    pub contiguity_pass: bool,
    pub symmetry_pass: bool,
    pub vertex_pass: bool,
    pub skipped: Option<String>,
}

impl SweepRow {
    fn skipped(param_value: f64, reason: String) -> Self {
        Self {
            param_value,
            volumes: Vec::new(),
            point_fractions: Vec::new(),
            components: Vec::new(),
            contiguity_pass: false,
            symmetry_pass: false,
            vertex_pass: false,
            skipped: Some(reason),
        }
    }
}

fn sweep_row(template: &ProblemSpec, param: SweepParameter, value: f64, opts: &SweepOptions) -> SweepRow {
    let spec = instantiate(template, param, value);
    let report = validate_spec(&spec);
    if !report.is_valid() {
        return SweepRow::skipped(value, report.to_string());
    }
    match solve_row(&spec, value, opts) {
        Ok(row) => row,
        Err(e) => SweepRow::skipped(value, e.to_string()),
    }
}

fn solve_row(spec: &ProblemSpec, value: f64, opts: &SweepOptions) -> Result<SweepRow> {
    let grid = build_grid(spec, opts.resolution)?;
    let (v, _) = value_iterate(spec, &grid, opts.epsilon)?;
    let policy = extract_policy(spec, &v, opts.tie_epsilon)?;
    let regions = decision_regions(&policy);
    let reps = representatives(spec.n_channels());
    let symmetry_pass = match check_symmetry(spec, &v, SYMMETRY_TOL) {
        Ok(r) => r.pass,
        Err(Error::AsymmetricGrid) => false,
        Err(e) => return Err(e),
    };
    Ok(SweepRow {
        param_value: value,
        volumes: reps.iter().map(|&a| regions.measure(a)).collect(),
        point_fractions: reps.iter().map(|&a| regions.volume(a)).collect(),
        components: reps.iter().map(|&a| regions.region(a).connectivity.components()).collect(),
        contiguity_pass: check_contiguity_all(&policy).iter().all(|r| r.pass()),
        symmetry_pass,
        vertex_pass: regions.all_vertices_pass(),
        skipped: None,
    })
}

/// Solves one instance per value. Invalid instances become skipped rows.
pub fn sweep(
    template: &ProblemSpec,
    param: SweepParameter,
    values: &[f64],
    opts: &SweepOptions,
) -> Vec<SweepRow> {
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        values.par_iter().map(|&x| sweep_row(template, param, x, opts)).collect()
    }
    #[cfg(not(feature = "std"))]
    {
        values.iter().map(|&x| sweep_row(template, param, x, opts)).collect()
    }
}

/// Adjacent solved rows between which `volumes[i] - volumes[j]` changes
/// sign, as `(param_before, param_after)`.
pub fn volume_crossings(rows: &[SweepRow], i: usize, j: usize) -> Vec<(f64, f64)> {
    let solved: Vec<&SweepRow> = rows.iter().filter(|r| r.skipped.is_none()).collect();
    solved
        .windows(2)
        .filter_map(|w| {
            let d0 = w[0].volumes[i] - w[0].volumes[j];
            let d1 = w[1].volumes[i] - w[1].volumes[j];
            ((d0 < 0.0) != (d1 < 0.0)).then_some((w[0].param_value, w[1].param_value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_spec;

    #[test]
    fn representative_masks() {
        let masks: Vec<u32> = representatives(3).iter().map(|a| a.mask()).collect();
        assert_eq!(masks, alloc::vec![0, 4, 6, 7]);
        assert_eq!(representatives(2).iter().map(|a| a.mask()).collect::<Vec<_>>(), alloc::vec![0, 2, 3]);
    }

    #[test]
    fn reward_ratio_reparameterization() {
        let spec = instantiate(&reference_spec(), SweepParameter::RewardRatioK2K1, 1.2);
        let r = &spec.rewards;
        assert!((2.0 * r.reward(2) / r.reward(1) - 1.2).abs() < 1e-12);
        assert!((3.0 * r.reward(3) / (2.0 * r.reward(2)) - 1.2).abs() < 1e-12);
        for k in 1..=3 {
            assert!((r.reward(k) / r.penalty(k) - 2.0).abs() < 1e-12);
        }
        assert!(validate_spec(&spec).is_valid());
        let too_steep = instantiate(&reference_spec(), SweepParameter::RewardRatioK2K1, 1.6);
        assert!(!validate_spec(&too_steep).is_valid());
    }

    #[test]
    fn penalty_ratio_scales_every_penalty() {
        let spec = instantiate(&reference_spec(), SweepParameter::RewardPenaltyRatio, 4.0);
        assert_eq!(spec.rewards.penalties, alloc::vec![0.75, 0.5, 0.445]);
    }

    #[test]
    fn invalid_rows_are_skipped_with_reason() {
        let opts = SweepOptions { resolution: 5, ..SweepOptions::default() };
        let rows = sweep(&reference_spec(), SweepParameter::Lambda0, &[0.2, 0.95], &opts);
        assert!(rows[0].skipped.is_none());
        let partial: f64 = rows[0].volumes.iter().sum();
        assert!(partial > 0.0 && partial <= 1.0 + 1e-12);
        assert!(rows[1].skipped.as_deref().unwrap().contains("lambda0 <= lambda1"));
    }

    #[test]
    fn parameter_names_round_trip() {
        for p in [
            SweepParameter::Lambda0,
            SweepParameter::Lambda1,
            SweepParameter::RewardPenaltyRatio,
            SweepParameter::RewardRatioK2K1,
        ] {
            assert_eq!(SweepParameter::parse(p.name()), Some(p));
        }
        assert_eq!(SweepParameter::parse("beta"), None);
    }
}
