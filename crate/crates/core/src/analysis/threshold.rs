//! Switching thresholds on cube edges and policy slices on the cube faces.

use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::grid::ValueFunction;
use crate::math::abs;
use crate::model::{Action, ActionSet, Belief, ProblemSpec};
use crate::solver::{q_value, Policy};
use crate::{Error, Result};

/// Points checked for sign changes before bisecting.
const SCAN_POINTS: usize = 400;
/// Q-differences this small count as zero when counting sign changes.
const SIGN_EPS: f64 = 1e-10;

/// A cube edge: every coordinate except `free` is pinned to 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub n_channels: usize,
    pub free: usize,
    /// `(coordinate, value)` for every pinned coordinate.
    pub pinned: Vec<(usize, f64)>,
}

impl Edge {
    pub fn new(n_channels: usize, free: usize, pinned: Vec<(usize, f64)>) -> Result<Self> {
        let mut seen = alloc::vec![false; n_channels];
        if free >= n_channels {
            return Err(Error::InvalidArgument("free coordinate out of range".into()));
        }
        seen[free] = true;
        for &(j, v) in &pinned {
            if j >= n_channels || seen[j] || !(v == 0.0 || v == 1.0) {
                return Err(Error::InvalidArgument("edge pins must be distinct coordinates at 0 or 1".into()));
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("edge must pin every other coordinate".into()));
        }
        Ok(Self { n_channels, free, pinned })
    }

    pub fn point(&self, x: f64) -> Vec<f64> {
        let mut p = alloc::vec![0.0; self.n_channels];
        for &(j, v) in &self.pinned {
            p[j] = v;
        }
        p[self.free] = x;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub edge: Edge,
    /// Free coordinate where the better action switches.
    pub threshold: f64,
    /// Better below the threshold.
    pub action_lo: Action,
    /// Better above the threshold.
    pub action_hi: Action,
    /// `|Q_lo - Q_hi|` at the threshold.
    pub residual: f64,
    /// Whether the two Q-values actually cross inside the edge.
    pub crossing: bool,
}

/// Locates the sign change of `Q(action_lo) - Q(action_hi)` along `edge` by
/// bisection to `tol`. Without a sign change the threshold sits at the end
/// the dominated action would own: 1 when `action_lo` wins everywhere, 0 when
/// `action_hi` does.
pub fn edge_threshold(
    spec: &ProblemSpec,
    v: &ValueFunction,
    edge: &Edge,
    action_lo: Action,
    action_hi: Action,
    tol: f64,
) -> Result<ThresholdResult> {
    if edge.n_channels != spec.n_channels() {
        return Err(Error::DimensionMismatch { expected: spec.n_channels(), found: edge.n_channels });
    }
    let diff = |x: f64| -> Result<f64> {
        let b = Belief::new(edge.point(x))?;
        Ok(q_value(spec, v, &b, action_lo)? - q_value(spec, v, &b, action_hi)?)
    };
    // Sign pattern on a scan that includes every grid coordinate.
    let mut xs: Vec<f64> = (0..=SCAN_POINTS).map(|i| i as f64 / SCAN_POINTS as f64).collect();
    xs.extend_from_slice(v.grid.axis(edge.free));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut signs: Vec<(f64, i8)> = Vec::with_capacity(xs.len());
    for &x in &xs {
        let d = diff(x)?;
        if abs(d) > SIGN_EPS {
            signs.push((x, if d > 0.0 { 1 } else { -1 }));
        }
    }
    let changes: Vec<usize> = (1..signs.len()).filter(|&i| signs[i].1 != signs[i - 1].1).collect();
    if changes.len() > 1 {
        return Err(Error::StructuralViolation(alloc::format!(
            "Q{} - Q{} changes sign {} times along the edge",
            action_lo,
            action_hi,
            changes.len()
        )));
    }
    let result = |threshold: f64, crossing: bool| -> Result<ThresholdResult> {
        Ok(ThresholdResult {
            edge: edge.clone(),
            threshold,
            action_lo,
            action_hi,
            residual: abs(diff(threshold)?),
            crossing,
        })
    };
    let Some(&i) = changes.first() else {
        let lo_wins = signs.first().is_none_or(|s| s.1 > 0);
        return result(if lo_wins { 1.0 } else { 0.0 }, false);
    };
    let (mut a, sa) = signs[i - 1];
    let (mut b, _) = signs[i];
    if sa < 0 {
        return Err(Error::StructuralViolation(alloc::format!(
            "{action_hi} is better below {action_lo} on this edge; swap the actions"
        )));
    }
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if diff(mid)? > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    result(0.5 * (a + b), true)
}

/// One of the three canonical thresholds of the three-channel problem,
/// with its fixed-point residual and agreement with the grid policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonicalThreshold {
    pub name: String,
    pub result: ThresholdResult,
    /// `|th - F(th)|` where `F` is the closed-form threshold equation
    /// evaluated on the interpolated value function.
    pub fixed_point_residual: f64,
    /// Grid points on the edge further than one step below (above) the
    /// threshold all choose `action_lo` (`action_hi`).
    pub grid_consistent: bool,
    /// Largest axis spacing on the free coordinate.
    pub grid_step: f64,
}

/// Thresholds on the edges `{p1 = 0, p3 = 0}`, `{p1 = 1, p3 = 0}` and
/// `{p1 = 1, p2 = 1}` for three channels.
pub fn canonical_thresholds(
    spec: &ProblemSpec,
    v: &ValueFunction,
    policy: &Policy,
    tol: f64,
) -> Result<Vec<CanonicalThreshold>> {
    if spec.n_channels() != 3 {
        return Err(Error::InvalidArgument("canonical thresholds need three channels".into()));
    }
    let (l0, l1) = (spec.channel.lambda0, spec.channel.lambda1);
    let t = |x: f64| spec.channel.propagate(x);
    let beta = spec.beta;
    let val = |p: [f64; 3]| v.interpolate(&p);
    let r = |k: usize| spec.rewards.reward(k);
    let c = |k: usize| spec.rewards.penalty(k);
    let a = |m: u32| Action::new(3, m);

    type Equation<'a> = (&'static str, Edge, Action, Action, alloc::boxed::Box<dyn Fn(f64) -> f64 + 'a>);
    let cases: [Equation; 3] = [
        (
            "th1",
            Edge::new(3, 1, alloc::vec![(0, 0.0), (2, 0.0)])?,
            a(0b000),
            a(0b010),
            alloc::boxed::Box::new(|x| {
                let base = val([l0, l0, l0]);
                (c(1) + beta * (val([t(x), l0, l0]) - base))
                    / (r(1) + c(1) + beta * (val([l0, l1, l0]) - base))
            }),
        ),
        (
            "th2",
            Edge::new(3, 1, alloc::vec![(0, 1.0), (2, 0.0)])?,
            a(0b100),
            a(0b110),
            alloc::boxed::Box::new(|x| {
                let base = val([l1, l0, l0]);
                (r(1) - r(2) + c(2) + beta * (val([t(x), l1, l0]) - base))
                    / (r(2) + c(2) + beta * (val([l1, l1, l0]) - base))
            }),
        ),
        (
            "th3",
            Edge::new(3, 2, alloc::vec![(0, 1.0), (1, 1.0)])?,
            a(0b110),
            a(0b111),
            alloc::boxed::Box::new(|x| {
                let base = val([l1, l1, l0]);
                (2.0 * r(2) - 2.0 * r(3) + c(3) + beta * (val([t(x), l1, l1]) - base))
                    / (r(3) + c(3) + beta * (val([l1, l1, l1]) - base))
            }),
        ),
    ];
    let mut out = Vec::new();
    for (name, edge, lo, hi, equation) in cases {
        let result = edge_threshold(spec, v, &edge, lo, hi, tol)?;
        let th = result.threshold;
        let fixed_point_residual = if result.crossing { abs(th - equation(th)) } else { 0.0 };
        let axis = v.grid.axis(edge.free);
        let grid_step = axis.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let grid_consistent = axis.iter().all(|&x| {
            let i = v.grid.index_of(&edge.point(x)).expect("edge points are grid points");
            if x < th - grid_step {
                policy.choice[i] == lo
            } else if x > th + grid_step {
                policy.choice[i] == hi
            } else {
                true
            }
        });
        out.push(CanonicalThreshold {
            name: name.into(),
            result,
            fixed_point_residual,
            grid_consistent,
            grid_step,
        });
    }
    Ok(out)
}

/// A cube face `p_axis = value` with `value` 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plane {
    pub axis: usize,
    pub value: f64,
}

impl Plane {
    /// Actions allowed on this face: none using a known-bad channel, all
    /// using a known-good one.
    pub fn allows(&self, a: Action) -> bool {
        a.uses(self.axis) == (self.value == 1.0)
    }

    /// All `2N` faces.
    pub fn all(n: usize) -> Vec<Plane> {
        (0..n)
            .flat_map(|axis| [0.0, 1.0].map(|value| Plane { axis, value }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneSlice {
    pub plane: Plane,
    /// Grid indices on the face, in grid order.
    pub points: Vec<usize>,
    pub choices: Vec<Action>,
    /// Every tie-broken action seen on the face.
    pub observed: ActionSet,
    /// Points whose choice is not allowed on the face.
    pub violations: Vec<(Vec<f64>, Action)>,
}

impl PlaneSlice {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The policy restricted to a cube face, checked against the face's action
/// restriction.
pub fn boundary_plane_policy(policy: &Policy, plane: Plane) -> Result<PlaneSlice> {
    let grid = &policy.grid;
    let n = grid.n_dims();
    if plane.axis >= n || !(plane.value == 0.0 || plane.value == 1.0) {
        return Err(Error::InvalidArgument("plane must pin one coordinate to 0 or 1".into()));
    }
    let k = if plane.value == 0.0 { 0 } else { grid.axis(plane.axis).len() - 1 };
    let mut idx = [0usize; crate::MAX_CHANNELS];
    let points: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            grid.unravel(i, &mut idx[..n]);
            idx[plane.axis] == k
        })
        .collect();
    let choices: Vec<Action> = points.iter().map(|&i| policy.choice[i]).collect();
    let mut observed = ActionSet::default();
    let mut violations = Vec::new();
    for (&i, &a) in points.iter().zip(&choices) {
        observed.insert(a);
        if !plane.allows(a) {
            violations.push((grid.point(i), a));
        }
    }
    Ok(PlaneSlice { plane, points, choices, observed, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::{reference_spec, ChannelParams};
    use crate::solver::{extract_policy, value_iterate, DEFAULT_TIE_EPSILON};

    #[test]
    fn edges_validate_pins() {
        assert!(Edge::new(3, 1, alloc::vec![(0, 0.0), (2, 1.0)]).is_ok());
        assert!(Edge::new(3, 1, alloc::vec![(0, 0.5), (2, 1.0)]).is_err());
        assert!(Edge::new(3, 1, alloc::vec![(0, 0.0)]).is_err());
        assert_eq!(Edge::new(3, 2, alloc::vec![(0, 1.0), (1, 1.0)]).unwrap().point(0.3), alloc::vec![1.0, 1.0, 0.3]);
    }

    #[test]
    fn face_restrictions() {
        let on = Plane { axis: 2, value: 1.0 };
        let off = Plane { axis: 0, value: 0.0 };
        assert!(on.allows(Action::new(3, 0b001)) && !on.allows(Action::new(3, 0b110)));
        assert!(off.allows(Action::new(3, 0b011)) && !off.allows(Action::new(3, 0b100)));
        assert_eq!(Plane::all(3).len(), 6);
    }

    #[test]
    fn certain_channels_give_degenerate_thresholds() {
        let mut spec = reference_spec();
        spec.channel = ChannelParams { lambda0: 1.0, lambda1: 1.0 };
        let grid = build_grid(&spec, 5).unwrap();
        let (v, _) = value_iterate(&spec, &grid, 1e-9).unwrap();
        // Every successor is the all-good belief, so the future terms cancel
        // and the crossing is where the immediate rewards meet.
        let edge = Edge::new(3, 2, alloc::vec![(0, 1.0), (1, 1.0)]).unwrap();
        let th = edge_threshold(&spec, &v, &edge, Action::new(3, 6), Action::new(3, 7), 1e-10).unwrap();
        let r = &spec.rewards;
        let myopic = (2.0 * r.reward(2) - 2.0 * r.reward(3) + r.penalty(3)) / (r.reward(3) + r.penalty(3));
        assert!((th.threshold - myopic).abs() < 1e-8);
        let edge = Edge::new(3, 0, alloc::vec![(1, 0.0), (2, 0.0)]).unwrap();
        let th = edge_threshold(&spec, &v, &edge, Action::new(3, 0), Action::new(3, 4), 1e-10).unwrap();
        let r1 = spec.rewards.reward(1);
        let c1 = spec.rewards.penalty(1);
        assert!((th.threshold - c1 / (r1 + c1)).abs() < 1e-8);
    }

    #[test]
    fn dominance_pins_threshold_to_an_end() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 5).unwrap();
        let (v, _) = value_iterate(&spec, &grid, 1e-8).unwrap();
        // Using the known-good first channel always beats idling.
        let edge = Edge::new(3, 1, alloc::vec![(0, 1.0), (2, 0.0)]).unwrap();
        let th = edge_threshold(&spec, &v, &edge, Action::new(3, 0), Action::new(3, 4), 1e-9).unwrap();
        assert_eq!((th.threshold, th.crossing), (0.0, false));
        let th = edge_threshold(&spec, &v, &edge, Action::new(3, 4), Action::new(3, 0), 1e-9).unwrap();
        assert_eq!((th.threshold, th.crossing), (1.0, false));
    }

    #[test]
    fn reference_faces_respect_restrictions() {
        let spec = reference_spec();
        let grid = build_grid(&spec, 11).unwrap();
        let (v, _) = value_iterate(&spec, &grid, 1e-8).unwrap();
        let policy = extract_policy(&spec, &v, DEFAULT_TIE_EPSILON).unwrap();
        let bottom = boundary_plane_policy(&policy, Plane { axis: 2, value: 0.0 }).unwrap();
        assert!(bottom.pass(), "{:?}", bottom.violations);
        assert_eq!(bottom.points.len(), 121);
        for a in bottom.observed.iter(3) {
            assert!([0b000, 0b010, 0b100, 0b110].contains(&a.mask()));
        }
        for plane in Plane::all(3) {
            assert!(boundary_plane_policy(&policy, plane).unwrap().pass());
        }
    }
}
