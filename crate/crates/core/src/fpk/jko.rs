//! Wasserstein proximal steps in 1D, solved in quantile coordinates.
//!
//! A density on `[a, b]` is carried by the positions `X_k = F⁻¹(q_k)` of fixed
//! mass levels `0 = q_0 < … < q_K = 1`, with `X_0 = a` and `X_K = b`. With
//! `Δq_j = q_{j+1} − q_j` and trapezoid weights `c_k` in `q`,
//! `½W²(ϱ⁰, ϱ) ≈ Σ c_k ½(X_k − X⁰_k)²` and
//! `F(ϱ) ≈ Σ c_k V(X_k) − θ Σ Δq_j log((X_{j+1} − X_j)/Δq_j)`,
//! so one proximal step is a smooth strictly convex problem in `X` (for
//! `1 + τV'' > 0`) with a tridiagonal Hessian. The levels are Lagrangian: they
//! are laid out once, a few per grid cell of the initial density, and every
//! later step keeps them. Mass stays in the box because the end quantiles are
//! pinned to the faces.

use super::wasserstein::Cdf;
use super::FpkProblem;
use crate::density::GridDensity;
use crate::domain::Grid;
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;

/// Residual below which a proximal solve counts as converged.
pub const PROX_TOL: f64 = 1e-9;
const PROX_MAX_ITER: usize = 60;

/// Mass levels and their positions. The spacings `X_{j+1} − X_j` are kept
/// alongside the positions: points crowd against a face when mass piles up
/// there, and differencing absolute positions would lose most digits of the
/// entropy term.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileState {
    q: Vec<f64>,
    x: Vec<f64>,
    dx: Vec<f64>,
}

impl QuantileState {
    fn from_spacings(q: Vec<f64>, a: f64, dx: Vec<f64>) -> Self {
        let mut x = Vec::with_capacity(dx.len() + 1);
        let mut acc = a;
        x.push(a);
        for d in &dx {
            acc += d;
            x.push(acc);
        }
        Self { q, x, dx }
    }

    pub fn levels(&self) -> &[f64] {
        &self.q
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    pub fn spacings(&self) -> &[f64] {
        &self.dx
    }

    fn gaps(&self) -> Vec<f64> {
        self.q.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct JkoSolver {
    a: f64,
    b: f64,
    drift: DriftSpec,
    theta: f64,
    per_cell: usize,
}

impl JkoSolver {
    /// `per_cell` levels are placed in every grid cell of the initial density.
    pub fn new(p: &FpkProblem, per_cell: usize) -> Result<Self> {
        if p.grid().dim() != 1 {
            return Err(Error::InvalidConfig("the proximal engine is one-dimensional".into()));
        }
        if per_cell == 0 {
            return Err(Error::InvalidConfig("need at least one level per cell".into()));
        }
        let d = p.domain();
        Ok(Self { a: d.lower()[0], b: d.upper()[0], drift: p.drift().clone(), theta: p.theta(), per_cell })
    }

    pub fn for_problem(p: &FpkProblem) -> Result<Self> {
        Self::new(p, 4)
    }

    pub fn quantiles(&self, d: &GridDensity) -> Result<QuantileState> {
        d.require_positive()?;
        let cdf = Cdf::new(d.grid(), d.values())?;
        let m = self.per_cell;
        let cum = cdf.cum();
        let mut q = Vec::with_capacity(cdf.cells() * m + 1);
        let mut x = Vec::with_capacity(cdf.cells() * m + 1);
        for k in 0..cdf.cells() {
            for j in 0..m {
                let level = cum[k] + (cum[k + 1] - cum[k]) * j as f64 / m as f64;
                q.push(level);
                x.push(cdf.quantile_in(k, level));
            }
        }
        q.push(1.0);
        x.push(self.b);
        x[0] = self.a;
        let dx = x.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(QuantileState::from_spacings(q, self.a, dx))
    }

    /// Nodal density from quantiles: cell values `Δq/ΔX` placed at cell
    /// midpoints, interpolated linearly, held constant beyond the outer
    /// midpoints, then renormalized.
    pub fn density(&self, s: &QuantileState, grid: &Grid) -> Result<GridDensity> {
        let mids: Vec<f64> = s.x.iter().zip(&s.dx).map(|(x, d)| x + 0.5 * d).collect();
        let vals: Vec<f64> = s.dx.iter().zip(s.gaps()).map(|(d, dq)| dq / d).collect();
        let mut out = Vec::with_capacity(grid.len());
        let mut c = 0usize;
        for x in grid.axis_nodes(0) {
            while c + 1 < mids.len() && mids[c + 1] < x {
                c += 1;
            }
            let v = if x <= mids[0] {
                vals[0]
            } else if c + 1 >= mids.len() {
                vals[mids.len() - 1]
            } else {
                let t = (x - mids[c]) / (mids[c + 1] - mids[c]);
                vals[c] + t * (vals[c + 1] - vals[c])
            };
            out.push(v);
        }
        GridDensity::new(grid.clone(), out)?.normalize()
    }

    /// Free energy in quantile coordinates.
    pub fn energy(&self, s: &QuantileState) -> f64 {
        let dq = s.gaps();
        let c = trapezoid_weights(&dq);
        let pot: f64 = s.x.iter().zip(&c).map(|(&x, c)| c * self.drift.potential(&[x])).sum();
        pot - self.theta * entropy_sum(&s.dx, &dq)
    }

    fn objective(&self, s: &QuantileState, x0: &[f64], c: &[f64], tau: f64) -> f64 {
        let quad: f64 = s.x.iter().zip(x0).zip(c).map(|((x, y), c)| c * (0.5 * (x - y).powi(2) + tau * self.drift.potential(&[*x]))).sum();
        quad - tau * self.theta * entropy_sum(&s.dx, &s.gaps())
    }

    /// `(V'(x), V''(x))`, the second derivative by central differences.
    fn grad_v(&self, x: f64) -> (f64, f64) {
        let f = |x: f64| {
            let mut g = [0.0];
            self.drift.drift(&[x], &mut g);
            -g[0]
        };
        let h = 1e-5 * (self.b - self.a);
        (f(x), (f(x + h) - f(x - h)) / (2.0 * h))
    }

    /// `argmin ½W²(s, ·) + τF(·)` by damped Newton on the interior quantiles.
    pub fn prox(&self, s: &QuantileState, tau: f64) -> Result<QuantileState> {
        if !(tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
        }
        let x0 = &s.x;
        let dq = s.gaps();
        let c = trapezoid_weights(&dq);
        let k = x0.len() - 1;
        let n = k - 1;
        let tt = tau * self.theta;
        let mut cur = s.clone();
        let mut g = vec![0.0; n];
        let (mut lower, mut diag, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut residual = f64::INFINITY;
        for _ in 0..PROX_MAX_ITER {
            let (x, dx) = (&cur.x, &cur.dx);
            let mut res = 0.0f64;
            for i in 1..k {
                let (left, right) = (dx[i - 1], dx[i]);
                let (dv, d2v) = self.grad_v(x[i]);
                g[i - 1] = c[i] * ((x[i] - x0[i]) + tau * dv) + tt * (dq[i] / right - dq[i - 1] / left);
                res = res.max(g[i - 1].abs() / c[i]);
                diag[i - 1] = c[i] * (1.0 + tau * d2v).max(0.1) + tt * (dq[i] / (right * right) + dq[i - 1] / (left * left));
                upper[i - 1] = if i < k - 1 { -tt * dq[i] / (right * right) } else { 0.0 };
                lower[i - 1] = if i > 1 { -tt * dq[i - 1] / (left * left) } else { 0.0 };
            }
            let stalled = res > 0.5 * residual;
            residual = res;
            if res <= 1e-13 || (res <= PROX_TOL && stalled) {
                break;
            }
            let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
            Tridiagonal::factor(&lower, &diag, &upper)?.solve_in_place(&mut step);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let j0 = self.objective(&cur, x0, &c, tau);
            let moved = |j: usize| if j == 0 || j == k { 0.0 } else { step[j - 1] };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial_dx: Vec<f64> = (0..k).map(|j| cur.dx[j] + alpha * (moved(j + 1) - moved(j))).collect();
                if trial_dx.iter().all(|d| *d > 0.0) {
                    let trial = QuantileState::from_spacings(cur.q.clone(), self.a, trial_dx);
                    // near the minimizer the objective is flat to rounding; trust the Newton step
                    if res < 1e-6 || self.objective(&trial, x0, &c, tau) <= j0 + 1e-4 * alpha * slope {
                        cur = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if residual > PROX_TOL {
            return Err(Error::ProxNoConverge { residual, iterations: PROX_MAX_ITER });
        }
        Ok(cur)
    }

    /// `steps` proximal steps of size `tau`; `observe(k, state)` sees each state.
    pub fn march<F>(&self, d0: &GridDensity, tau: f64, steps: usize, mut observe: F) -> Result<QuantileState>
    where
        F: FnMut(usize, &QuantileState),
    {
        let mut s = self.quantiles(d0)?;
        observe(0, &s);
        for k in 1..=steps {
            s = self.prox(&s, tau)?;
            observe(k, &s);
        }
        Ok(s)
    }
}

fn trapezoid_weights(dq: &[f64]) -> Vec<f64> {
    let k = dq.len();
    (0..=k)
        .map(|i| 0.5 * (if i > 0 { dq[i - 1] } else { 0.0 } + if i < k { dq[i] } else { 0.0 }))
        .collect()
}

fn entropy_sum(dx: &[f64], dq: &[f64]) -> f64 {
    dx.iter().zip(dq).map(|(d, dq)| dq * (d / dq).ln()).sum()
}

/// One Wasserstein proximal step `argmin ½W²(d, ϱ) + τF(ϱ)` on the problem's grid.
pub fn prox_step_jko(p: &FpkProblem, d: &GridDensity, tau: f64) -> Result<GridDensity> {
    if d.grid() != p.grid() {
        return Err(Error::DomainMismatch);
    }
    let mass = d.trapezoid_mass();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("proximal step needs a normalized density, mass = {mass}")));
    }
    let solver = JkoSolver::for_problem(p)?;
    let s = solver.prox(&solver.quantiles(d)?, tau)?;
    solver.density(&s, p.grid())
}
