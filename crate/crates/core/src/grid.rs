//! Rectilinear belief grids and multilinear value functions on them.

use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::model::{ChannelParams, ProblemSpec};
use crate::{Error, Result, MAX_CHANNELS};

/// Grid coordinates within this distance of `lambda0`/`lambda1` are replaced
/// by the exact parameter instead of adding a sliver cell.
const SNAP: f64 = 1e-12;

/// Position of a coordinate inside an axis: `lo` is the lower grid index and
/// `frac` the normalized offset to `lo + 1`. `frac == 0` means on-grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    pub lo: usize,
    pub frac: f64,
}

/// Product grid over `[0, 1]^N`. Points are ordered lexicographically in
/// their index tuples with the first coordinate varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefGrid {
    axes: Vec<Vec<f64>>,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    len: usize,
}

impl BeliefGrid {
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Self> {
        let n = axes.len();
        if n == 0 || n > MAX_CHANNELS {
            return Err(Error::InvalidArgument(alloc::format!(
                "grid needs between 1 and {MAX_CHANNELS} axes, got {n}"
            )));
        }
        for axis in &axes {
            if axis.len() < 2 {
                return Err(Error::InvalidArgument("each axis needs at least 2 points".into()));
            }
            if axis[0] != 0.0 || axis[axis.len() - 1] != 1.0 {
                return Err(Error::InvalidArgument("each axis must span exactly [0, 1]".into()));
            }
            if axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidArgument("axis coordinates must strictly increase".into()));
            }
        }
        let mut strides = vec![1usize; n];
        for j in (0..n.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * axes[j + 1].len();
        }
        let len = strides[0] * axes[0].len();
        Ok(Self { axes, strides, len })
    }

    pub fn n_dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, j: usize) -> &[f64] {
        &self.axes[j]
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether every axis carries the same coordinates.
    pub fn is_symmetric(&self) -> bool {
        self.axes.windows(2).all(|w| w[0] == w[1])
    }

    /// Whether `lambda0` and `lambda1` are exact coordinates of every axis,
    /// so that revealed-channel successors land on grid lines.
    pub fn supports(&self, params: &ChannelParams) -> bool {
        self.axes.iter().all(|axis| {
            exact_index(axis, params.lambda0).is_some() && exact_index(axis, params.lambda1).is_some()
        })
    }

    #[inline]
    pub fn unravel(&self, mut index: usize, out: &mut [usize]) {
        for j in (0..self.n_dims()).rev() {
            let m = self.axes[j].len();
            out[j] = index % m;
            index /= m;
        }
    }

    #[inline]
    pub fn ravel(&self, indices: &[usize]) -> usize {
        indices.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut idx = [0usize; MAX_CHANNELS];
        let n = self.n_dims();
        self.unravel(index, &mut idx[..n]);
        (0..n).map(|j| self.axes[j][idx[j]]).collect()
    }

    /// Trapezoid weights of the points on axis `j`. They sum to 1.
    pub fn axis_weights(&self, j: usize) -> Vec<f64> {
        let axis = &self.axes[j];
        let m = axis.len();
        (0..m)
            .map(|i| {
                let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
                let right = if i + 1 < m { axis[i + 1] - axis[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Product trapezoid weight of every point, in grid order. The weights
    /// sum to 1, so summing them over a set of points estimates its volume.
    pub fn point_weights(&self) -> Vec<f64> {
        let n = self.n_dims();
        let per_axis: Vec<Vec<f64>> = (0..n).map(|j| self.axis_weights(j)).collect();
        let mut idx = [0usize; MAX_CHANNELS];
        (0..self.len)
            .map(|p| {
                self.unravel(p, &mut idx[..n]);
                (0..n).map(|j| per_axis[j][idx[j]]).product()
            })
            .collect()
    }

    /// Index of `value` on axis `j` if it is an exact grid coordinate.
    pub fn axis_index(&self, j: usize, value: f64) -> Option<usize> {
        exact_index(&self.axes[j], value)
    }

    /// Grid index of a point whose coordinates all lie on the grid.
    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        let mut idx = [0usize; MAX_CHANNELS];
        for (j, &p) in point.iter().enumerate() {
            idx[j] = self.axis_index(j, p)?;
        }
        Some(self.ravel(&idx[..self.n_dims()]))
    }

    #[inline]
    pub fn locate(&self, j: usize, value: f64) -> Located {
        locate(&self.axes[j], value)
    }

    /// Grid point closest to `p` coordinate by coordinate. Ties go to the
    /// lower coordinate.
    pub fn nearest_index(&self, p: &[f64]) -> usize {
        let mut index = 0;
        for (j, &x) in p.iter().enumerate() {
            let axis = &self.axes[j];
            let loc = locate(axis, x);
            let i = if loc.frac == 0.0 || x - axis[loc.lo] <= axis[loc.lo + 1] - x {
                loc.lo
            } else {
                loc.lo + 1
            };
            index += i * self.strides[j];
        }
        index
    }

    /// Calls `visit(vertex, weight)` for each grid vertex with positive
    /// multilinear weight at the located point. Weights sum to one.
    #[inline]
    pub fn for_each_vertex(&self, cells: &[Located], mut visit: impl FnMut(usize, f64)) {
        let mut base = 0;
        let mut active = [(0usize, 0.0f64); MAX_CHANNELS];
        let mut d = 0;
        for (j, c) in cells.iter().enumerate() {
            base += c.lo * self.strides[j];
            if c.frac > 0.0 {
                active[d] = (self.strides[j], c.frac);
                d += 1;
            }
        }
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for (bit, &(stride, frac)) in active[..d].iter().enumerate() {
                if corner >> bit & 1 == 1 {
                    w *= frac;
                    idx += stride;
                } else {
                    w *= 1.0 - frac;
                }
            }
            visit(idx, w);
        }
    }
}

fn exact_index(axis: &[f64], value: f64) -> Option<usize> {
    axis.binary_search_by(|x| x.total_cmp(&value)).ok()
}

fn locate(axis: &[f64], value: f64) -> Located {
    let value = value.clamp(0.0, 1.0);
    // first index with axis[i] > value
    let upper = axis.partition_point(|&x| x <= value);
    let lo = upper - 1;
    if axis[lo] == value || lo + 1 == axis.len() {
        return Located { lo, frac: 0.0 };
    }
    let frac = (value - axis[lo]) / (axis[lo + 1] - axis[lo]);
    Located { lo, frac }
}

/// Uniform axis of `resolution` points, augmented with `lambda0` and
/// `lambda1`, shared by all `N` dimensions.
pub fn build_grid(spec: &ProblemSpec, resolution: usize) -> Result<BeliefGrid> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "resolution must be at least 2, got {resolution}"
        )));
    }
    let axis = build_axis(&spec.channel, resolution);
    BeliefGrid::from_axes(vec![axis; spec.n_channels()])
}

fn build_axis(params: &ChannelParams, resolution: usize) -> Vec<f64> {
    let steps = (resolution - 1) as f64;
    let mut axis: Vec<f64> = (0..resolution).map(|i| i as f64 / steps).collect();
    for lambda in [params.lambda0, params.lambda1] {
        match axis.iter_mut().find(|x| crate::math::abs(**x - lambda) <= SNAP) {
            Some(x) if *x != 0.0 && *x != 1.0 => *x = lambda,
            _ => axis.push(lambda),
        }
    }
    axis.sort_by(f64::total_cmp);
    axis.dedup();
    axis
}

/// Values on every grid point, extended to the cube by multilinear
/// interpolation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueFunction {
    pub grid: BeliefGrid,
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(grid: BeliefGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: BeliefGrid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: BeliefGrid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    /// Multilinear interpolation over the enclosing cell; exact on grid
    /// points. Coordinates are clamped to `[0, 1]`.
    pub fn interpolate(&self, p: &[f64]) -> f64 {
        let n = self.grid.n_dims();
        let mut cells = [Located { lo: 0, frac: 0.0 }; MAX_CHANNELS];
        for j in 0..n {
            cells[j] = self.grid.locate(j, p[j]);
        }
        self.interpolate_located(&cells[..n])
    }

    #[inline]
    pub fn interpolate_located(&self, cells: &[Located]) -> f64 {
        let mut acc = 0.0;
        self.grid.for_each_vertex(cells, |i, w| acc += w * self.values[i]);
        acc
    }

    pub fn max_abs_diff(&self, other: &ValueFunction) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| crate::math::abs(a - b))
            .fold(0.0, f64::max))
    }
}
