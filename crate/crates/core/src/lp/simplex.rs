//! Dense revised simplex for `max c^T x  s.t.  A x = b, x >= 0`.
//!
//! The basis inverse is stored explicitly and updated by rank-one pivots,
//! with periodic refactorization from the basic columns. Pricing is Dantzig
//! (largest reduced cost); after a run of degenerate pivots it falls back to
//! Bland's rule until the objective moves again.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::abs;
use crate::{Error, Result};

/// Equality-form LP with sparse columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub n_rows: usize,
    /// `(row, coefficient)` entries of each column.
    pub columns: Vec<Vec<(usize, f64)>>,
    pub costs: Vec<f64>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// A column enters while its reduced cost exceeds this.
    pub optimality_tol: f64,
    /// Smallest admissible pivot element.
    pub pivot_tol: f64,
    pub max_pivots: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            optimality_tol: 1e-9,
            pivot_tol: 1e-11,
            max_pivots: 1_000_000,
            refactor_every: 2000,
            degenerate_limit: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub x: Vec<f64>,
    /// Simplex multipliers `y = c_B^T B^{-1}`, one per row.
    pub duals: Vec<f64>,
    /// Basic column per row position.
    pub basis: Vec<usize>,
    pub objective: f64,
    pub pivots: usize,
}

/// Solves `lp`. With `basis` given it must be a feasible starting basis;
/// otherwise a phase-one problem with artificial columns finds one.
pub fn maximize(
    lp: &StandardLp,
    basis: Option<&[usize]>,
    opts: &SimplexOptions,
) -> Result<SimplexSolution> {
    check_shape(lp)?;
    if let Some(start) = basis {
        if start.len() != lp.n_rows || start.iter().any(|&j| j >= lp.columns.len()) {
            return Err(Error::InvalidArgument("starting basis has the wrong shape".into()));
        }
        let mut state = Revised::new(lp, start.to_vec(), opts)?;
        if state.xb.iter().all(|&x| x >= -opts.pivot_tol.max(1e-9)) {
            state.optimize(&lp.costs, None)?;
            return Ok(state.finish(&lp.costs));
        }
    }
    two_phase(lp, opts)
}

fn check_shape(lp: &StandardLp) -> Result<()> {
    if lp.costs.len() != lp.columns.len() || lp.rhs.len() != lp.n_rows {
        return Err(Error::InvalidArgument("LP dimensions disagree".into()));
    }
    if lp.columns.iter().flatten().any(|&(r, v)| r >= lp.n_rows || !v.is_finite()) {
        return Err(Error::InvalidArgument("LP column entry out of range".into()));
    }
    Ok(())
}

fn two_phase(lp: &StandardLp, opts: &SimplexOptions) -> Result<SimplexSolution> {
    let m = lp.n_rows;
    let n = lp.columns.len();
    // Flip rows so that b >= 0, then append one artificial per row.
    let sign: Vec<f64> = lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut columns: Vec<Vec<(usize, f64)>> = lp
        .columns
        .iter()
        .map(|col| col.iter().map(|&(r, v)| (r, v * sign[r])).collect())
        .collect();
    columns.extend((0..m).map(|r| vec![(r, 1.0)]));
    let aux = StandardLp {
        n_rows: m,
        columns,
        costs: vec![0.0; n + m],
        rhs: lp.rhs.iter().zip(&sign).map(|(b, s)| b * s).collect(),
    };
    let mut phase1_costs = vec![0.0; n + m];
    phase1_costs[n..].iter_mut().for_each(|c| *c = -1.0);
    let mut state = Revised::new(&aux, (n..n + m).collect(), opts)?;
    state.optimize(&phase1_costs, None)?;
    let infeasibility: f64 = state
        .basis
        .iter()
        .zip(&state.xb)
        .filter(|(&j, _)| j >= n)
        .map(|(_, &x)| x)
        .sum();
    let scale = 1.0 + aux.rhs.iter().map(|b| abs(*b)).fold(0.0, f64::max);
    if infeasibility > 1e-7 * scale {
        return Err(Error::LpInfeasible);
    }
    // Pivot zero-level artificials out where a structural column can replace
    // them; rows where none can are redundant and keep their artificial.
    for r in 0..m {
        if state.basis[r] < n {
            continue;
        }
        let mut u = vec![0.0; m];
        let replacement = (0..n).find(|&j| {
            !state.is_basic[j] && {
                state.column_image(j, &mut u);
                abs(u[r]) > 1e-7
            }
        });
        if let Some(j) = replacement {
            state.column_image(j, &mut u);
            state.pivot(r, j, &u);
        }
    }
    let mut costs = lp.costs.clone();
    costs.extend(core::iter::repeat_n(0.0, m));
    state.optimize(&costs, Some(n))?;
    let mut sol = state.finish(&costs);
    sol.x.truncate(n);
    for (y, s) in sol.duals.iter_mut().zip(&sign) {
        *y *= s;
    }
    Ok(sol)
}

struct Revised<'a> {
    lp: &'a StandardLp,
    opts: SimplexOptions,
    m: usize,
    /// Row-major `B^{-1}`.
    binv: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    xb: Vec<f64>,
    pivots: usize,
    since_refactor: usize,
}

impl<'a> Revised<'a> {
    fn new(lp: &'a StandardLp, basis: Vec<usize>, opts: &SimplexOptions) -> Result<Self> {
        let m = lp.n_rows;
        let mut is_basic = vec![false; lp.columns.len()];
        for &j in &basis {
            if is_basic[j] {
                return Err(Error::InvalidArgument("starting basis repeats a column".into()));
            }
            is_basic[j] = true;
        }
        let mut state = Self {
            lp,
            opts: *opts,
            m,
            binv: Vec::new(),
            basis,
            is_basic,
            xb: vec![0.0; m],
            pivots: 0,
            since_refactor: 0,
        };
        state.refactor()?;
        Ok(state)
    }

    /// Rebuilds `B^{-1}` and `x_B` from the basic columns.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (pos, &j) in self.basis.iter().enumerate() {
            for &(r, v) in &self.lp.columns[j] {
                b[r * m + pos] += v;
            }
        }
        self.binv = invert(b, m)?;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&self.lp.rhs).map(|(a, b)| a * b).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn duals(&self, costs: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &j) in self.basis.iter().enumerate() {
            let c = costs[j];
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, &b) in y.iter_mut().zip(row) {
                    *yk += c * b;
                }
            }
        }
        y
    }

    fn column_image(&self, j: usize, out: &mut [f64]) {
        let m = self.m;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.binv[i * m..(i + 1) * m];
            *o = self.lp.columns[j].iter().map(|&(r, v)| row[r] * v).sum();
        }
    }

    fn reduced_cost(&self, costs: &[f64], y: &[f64], j: usize) -> f64 {
        costs[j] - self.lp.columns[j].iter().map(|&(r, v)| y[r] * v).sum::<f64>()
    }

    fn pivot(&mut self, r: usize, entering: usize, u: &[f64]) {
        let m = self.m;
        let theta = self.xb[r] / u[r];
        for (i, x) in self.xb.iter_mut().enumerate() {
            if i != r {
                *x -= theta * u[i];
            }
        }
        self.xb[r] = theta;
        let inv = 1.0 / u[r];
        let (head, rest) = self.binv.split_at_mut(r * m);
        let (pivot_row, tail) = rest.split_at_mut(m);
        pivot_row.iter_mut().for_each(|v| *v *= inv);
        for (i, row) in head.chunks_exact_mut(m).enumerate() {
            eliminate(row, pivot_row, u[i]);
        }
        for (k, row) in tail.chunks_exact_mut(m).enumerate() {
            eliminate(row, pivot_row, u[r + 1 + k]);
        }
        self.is_basic[self.basis[r]] = false;
        self.is_basic[entering] = true;
        self.basis[r] = entering;
        self.pivots += 1;
        self.since_refactor += 1;
    }

    /// Pivots until no column in `0..limit` prices out. Columns at or past
    /// `limit` never enter.
    fn optimize(&mut self, costs: &[f64], limit: Option<usize>) -> Result<()> {
        let limit = limit.unwrap_or(self.lp.columns.len());
        let mut u = vec![0.0; self.m];
        let mut degenerate_run = 0;
        let mut polished = false;
        loop {
            if self.pivots >= self.opts.max_pivots {
                return Err(Error::LpNumerical(alloc::format!(
                    "pivot limit {} reached",
                    self.opts.max_pivots
                )));
            }
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            let y = self.duals(costs);
            let bland = degenerate_run >= self.opts.degenerate_limit;
            let mut entering = None;
            let mut best = self.opts.optimality_tol;
            for j in 0..limit {
                if self.is_basic[j] {
                    continue;
                }
                let d = self.reduced_cost(costs, &y, j);
                if d > best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(e) = entering else {
                if polished || self.since_refactor == 0 {
                    return Ok(());
                }
                // Confirm optimality against a fresh factorization.
                self.refactor()?;
                polished = true;
                continue;
            };
            polished = false;
            self.column_image(e, &mut u);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if u[i] <= self.opts.pivot_tol {
                    continue;
                }
                let ratio = self.xb[i].max(0.0) / u[i];
                let better = match leave {
                    None => true,
                    Some((k, best)) => {
                        if ratio < best - 1e-12 {
                            true
                        } else if ratio <= best + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[k]
                            } else {
                                u[i] > u[k]
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(Error::LpUnbounded);
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, e, &u);
        }
    }

    fn finish(&self, costs: &[f64]) -> SimplexSolution {
        let mut x = vec![0.0; self.lp.columns.len()];
        for (&j, &v) in self.basis.iter().zip(&self.xb) {
            x[j] = v.max(0.0);
        }
        let objective = x.iter().zip(costs).map(|(a, b)| a * b).sum();
        SimplexSolution {
            x,
            duals: self.duals(costs),
            basis: self.basis.clone(),
            objective,
            pivots: self.pivots,
        }
    }
}

#[inline]
fn eliminate(row: &mut [f64], pivot_row: &[f64], factor: f64) {
    if factor != 0.0 {
        for (a, &p) in row.iter_mut().zip(pivot_row) {
            *a -= factor * p;
        }
    }
}

/// In-place Gauss-Jordan inversion with partial pivoting of a row-major
/// `m x m` matrix.
pub fn invert(mut a: Vec<f64>, m: usize) -> Result<Vec<f64>> {
    let mut perm: Vec<usize> = (0..m).collect();
    let scale = a.iter().map(|v| abs(*v)).fold(0.0, f64::max).max(1.0);
    let mut pivot_row = vec![0.0; m];
    for k in 0..m {
        let p = (k..m)
            .max_by(|&i, &j| abs(a[i * m + k]).total_cmp(&abs(a[j * m + k])))
            .unwrap_or(k);
        if abs(a[p * m + k]) <= 1e-13 * scale {
            return Err(Error::LpNumerical("singular basis".into()));
        }
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
            perm.swap(k, p);
        }
        let inv = 1.0 / a[k * m + k];
        for c in 0..m {
            a[k * m + c] *= inv;
        }
        a[k * m + k] = inv;
        pivot_row.copy_from_slice(&a[k * m..(k + 1) * m]);
        for i in 0..m {
            if i == k {
                continue;
            }
            let f = a[i * m + k];
            if f != 0.0 {
                let row = &mut a[i * m..(i + 1) * m];
                for (c, (v, &pv)) in row.iter_mut().zip(&pivot_row).enumerate() {
                    *v = if c == k { -f * pv } else { *v - f * pv };
                }
            }
        }
    }
    // Row swaps on the input become column swaps on the inverse.
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for (c, &pc) in perm.iter().enumerate() {
            out[i * m + pc] = a[i * m + c];
        }
    }
    Ok(out)
}
