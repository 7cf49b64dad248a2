//! Implicit finite-volume engine for the reflected Fokker–Planck equation
//! `∂ρ/∂t = ∇·(∇V ρ) + θΔρ` with zero-flux faces, the backward-factor march
//! via the substitution `p = φ·e^{−V/θ}`, and the 1D Wasserstein proximal engine.
//!
//! Face fluxes use exponential fitting (Scharfetter–Gummel):
//! `J = −(θ/h)[B(−δ)p₊ − B(δ)p₋]`, `δ = (V₊ − V₋)/θ`, `B(z) = z/(eᶻ − 1)`.
//! Control volumes coincide with the trapezoid weights, so the implicit step
//! conserves trapezoid mass, maps nonnegative data to nonnegative data, and
//! leaves `e^{−V/θ}` exactly stationary.

mod jko;
mod lyapunov;
mod wasserstein;

pub use jko::{prox_step_jko, JkoSolver, QuantileState};
pub use lyapunov::{lyapunov_value, LyapunovFunctional};
pub(crate) use wasserstein::Cdf;
pub use wasserstein::wasserstein1d;

use log::debug;

use crate::density::GridDensity;
use crate::domain::{BoxDomain, Grid};
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, Tridiagonal};

/// How a 2D implicit step is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Splitting {
    /// Locally one-dimensional: an implicit sweep along axis 0, then axis 1
    /// (reversed for the backward factor so the two marches stay adjoint).
    #[default]
    Lod,
    /// Monolithic backward Euler solved by preconditioned conjugate gradients.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarchMode {
    Forward,
    BackwardFactor,
}

/// Tolerance of the coupled 2D iterative solve.
pub const COUPLED_TOL: f64 = 1e-12;

/// One grid line of the 1D finite-volume operator.
#[derive(Debug, Clone)]
struct LineOp {
    weights: Vec<f64>,
    /// Per face: rate from the left node into the right one, and back.
    right: Vec<f64>,
    left: Vec<f64>,
}

impl LineOp {
    fn new(nodes: &[f64], weights: Vec<f64>, potential: &[f64], theta: f64) -> Self {
        let faces = nodes.len() - 1;
        let mut right = Vec::with_capacity(faces);
        let mut left = Vec::with_capacity(faces);
        for k in 0..faces {
            let h = nodes[k + 1] - nodes[k];
            let delta = (potential[k + 1] - potential[k]) / theta;
            right.push(theta / h * bernoulli(delta));
            left.push(theta / h * bernoulli(-delta));
        }
        Self { weights, right, left }
    }

    /// `(W + dt·A)` factored, where `W ṗ = −A p` is the semi-discrete equation.
    fn factor(&self, dt: f64) -> Result<Tridiagonal> {
        let n = self.weights.len();
        let mut lower = vec![0.0; n];
        let mut diag = self.weights.clone();
        let mut upper = vec![0.0; n];
        for k in 0..n - 1 {
            diag[k] += dt * self.right[k];
            diag[k + 1] += dt * self.left[k];
            upper[k] = -dt * self.left[k];
            lower[k + 1] = -dt * self.right[k];
        }
        Tridiagonal::factor(&lower, &diag, &upper)
    }

    /// Adds `scale·(A q)` for the strided line into `out`.
    fn add_generator(&self, q: &[f64], out: &mut [f64], offset: usize, stride: usize, scale: f64) {
        for k in 0..self.right.len() {
            let (i, j) = (offset + k * stride, offset + (k + 1) * stride);
            let flow = self.right[k] * q[i] - self.left[k] * q[j];
            out[i] += scale * flow;
            out[j] -= scale * flow;
        }
    }

    fn diag_generator(&self, k: usize) -> f64 {
        let mut d = 0.0;
        if k < self.right.len() {
            d += self.right[k];
        }
        if k > 0 {
            d += self.left[k - 1];
        }
        d
    }
}

/// `B(z) = z/(eᶻ − 1)`, with `B(0) = 1`.
pub(crate) fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Discretized forward Kolmogorov problem with fixed step `dt`.
#[derive(Debug, Clone)]
pub struct FpkProblem {
    grid: Grid,
    drift: DriftSpec,
    theta: f64,
    dt: f64,
    splitting: Splitting,
    /// `e^{−(V−c)/θ}` with `c` centring the nodal range of `V`, which keeps
    /// both `e^{∓V/θ}` representable.
    gibbs: Vec<f64>,
    /// `lines[axis][line]`.
    lines: Vec<Vec<LineOp>>,
    factors: Vec<Vec<Tridiagonal>>,
}

impl FpkProblem {
    pub fn new(grid: Grid, drift: DriftSpec, theta: f64, dt: f64) -> Result<Self> {
        Self::with_splitting(grid, drift, theta, dt, Splitting::Lod)
    }

    pub fn with_splitting(grid: Grid, drift: DriftSpec, theta: f64, dt: f64, splitting: Splitting) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidConfig(format!("theta must be positive, got {theta}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let mut potential = grid.sample(|x| drift.potential(x));
        if let Some((node, &value)) = potential.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidValue { node, value });
        }
        let (lo, hi) = potential.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mid = 0.5 * (lo + hi);
        potential.iter_mut().for_each(|v| *v -= mid);
        let gibbs = potential.iter().map(|v| (-v / theta).exp()).collect();

        let n = grid.points().to_vec();
        let mut lines = Vec::new();
        match grid.dim() {
            1 => lines.push(vec![LineOp::new(&grid.axis_nodes(0), grid.axis_weights(0), &potential, theta)]),
            _ => {
                let (n0, n1) = (n[0], n[1]);
                let (x0, x1) = (grid.axis_nodes(0), grid.axis_nodes(1));
                let (w0, w1) = (grid.axis_weights(0), grid.axis_weights(1));
                let along0 = (0..n1)
                    .map(|j| {
                        let v: Vec<f64> = (0..n0).map(|i| potential[i * n1 + j]).collect();
                        LineOp::new(&x0, w0.clone(), &v, theta)
                    })
                    .collect();
                let along1 = (0..n0).map(|i| LineOp::new(&x1, w1.clone(), &potential[i * n1..(i + 1) * n1], theta)).collect();
                lines.push(along0);
                lines.push(along1);
            }
        }
        let factors = lines
            .iter()
            .map(|axis| axis.iter().map(|l| l.factor(dt)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        debug!(
            "fpk problem: {} nodes, dt = {dt:e}, diffusion number {:.3}",
            grid.len(),
            grid.diffusion_number(theta, dt)
        );
        Ok(Self { grid, drift, theta, dt, splitting, gibbs, lines, factors })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain(&self) -> &BoxDomain {
        self.grid.domain()
    }

    pub fn drift(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn splitting(&self) -> Splitting {
        self.splitting
    }

    pub fn diffusion_number(&self) -> f64 {
        self.grid.diffusion_number(self.theta, self.dt)
    }

    /// Unnormalized Gibbs density `e^{−(V−c)/θ}` on the nodes, for a fixed shift `c`.
    pub fn gibbs(&self) -> &[f64] {
        &self.gibbs
    }

    /// `φ ↦ p = φ·e^{−V/θ}` (up to the fixed shift of `V`).
    pub fn to_p(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().zip(&self.gibbs).map(|(f, g)| f * g).collect()
    }

    pub fn from_p(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.gibbs).map(|(p, g)| p / g).collect()
    }

    fn check(&self, d: &GridDensity) -> Result<()> {
        if d.grid() != &self.grid {
            return Err(Error::DomainMismatch);
        }
        Ok(())
    }

    /// One implicit step on raw nodal values, in place.
    pub(crate) fn step_values(&self, values: &mut [f64], reversed: bool) -> Result<()> {
        if self.grid.dim() == 1 {
            let w = &self.lines[0][0].weights;
            values.iter_mut().zip(w).for_each(|(v, w)| *v *= w);
            self.factors[0][0].solve_in_place(values);
            return Ok(());
        }
        match self.splitting {
            Splitting::Lod => {
                let order: [usize; 2] = if reversed { [1, 0] } else { [0, 1] };
                for axis in order {
                    self.sweep(values, axis);
                }
            }
            Splitting::Coupled => self.coupled_step(values)?,
        }
        Ok(())
    }

    fn sweep(&self, values: &mut [f64], axis: usize) {
        let n1 = self.grid.points()[1];
        let w = &self.lines[axis][0].weights;
        if axis == 0 {
            for (i, row) in values.chunks_mut(n1).enumerate() {
                row.iter_mut().for_each(|v| *v *= w[i]);
            }
            for (j, f) in self.factors[0].iter().enumerate() {
                f.solve_strided(values, j, n1);
            }
        } else {
            for (row, f) in values.chunks_mut(n1).zip(&self.factors[1]) {
                row.iter_mut().zip(w).for_each(|(v, w)| *v *= w);
                f.solve_in_place(row);
            }
        }
    }

    fn coupled_step(&self, values: &mut [f64]) -> Result<()> {
        let n1 = self.grid.points()[1];
        let (w0, w1) = (&self.lines[0][0].weights, &self.lines[1][0].weights);
        let dt = self.dt;
        let g = &self.gibbs;
        // (W + dt·A) p = W p⁰ with p = G y; (W + dt·A)G is symmetric positive definite.
        let apply = |y: &[f64], out: &mut [f64]| {
            let q: Vec<f64> = y.iter().zip(g).map(|(y, g)| y * g).collect();
            for (k, o) in out.iter_mut().enumerate() {
                *o = w0[k / n1] * w1[k % n1] * q[k];
            }
            for (j, line) in self.lines[0].iter().enumerate() {
                line.add_generator(&q, out, j, n1, dt * w1[j]);
            }
            for (i, line) in self.lines[1].iter().enumerate() {
                line.add_generator(&q, out, i * n1, 1, dt * w0[i]);
            }
        };
        let diag: Vec<f64> = (0..values.len())
            .map(|k| {
                let (i, j) = (k / n1, k % n1);
                g[k] * (w0[i] * w1[j] + dt * (w1[j] * self.lines[0][j].diag_generator(i) + w0[i] * self.lines[1][i].diag_generator(j)))
            })
            .collect();
        let b: Vec<f64> = values.iter().enumerate().map(|(k, v)| w0[k / n1] * w1[k % n1] * v).collect();
        let mut y: Vec<f64> = values.iter().zip(g).map(|(v, g)| v / g).collect();
        conjugate_gradient(apply, &diag, &b, &mut y, COUPLED_TOL, 20 * values.len().max(100))?;
        for ((v, y), g) in values.iter_mut().zip(&y).zip(g) {
            *v = (y * g).max(0.0);
        }
        Ok(())
    }
}

/// One implicit finite-volume step of the forward equation.
pub fn step_forward(p: &FpkProblem, d: &GridDensity) -> Result<GridDensity> {
    p.check(d)?;
    let mut v = d.values().to_vec();
    p.step_values(&mut v, false)?;
    Ok(GridDensity::new(p.grid.clone(), v)?.with_flag(d.is_normalized()))
}

/// One reversed-time step of the backward factor `φ`: transform to `p`,
/// advance with the forward engine, transform back.
pub fn step_backward_factor(p: &FpkProblem, phi: &GridDensity) -> Result<GridDensity> {
    p.check(phi)?;
    phi.require_positive()?;
    let mut v = p.to_p(phi.values());
    p.step_values(&mut v, true)?;
    GridDensity::new(p.grid.clone(), p.from_p(&v))
}

/// Number of `dt` steps spanning `[t0, t1]`.
pub fn step_count(p: &FpkProblem, t0: f64, t1: f64) -> Result<usize> {
    if !(t1 >= t0) {
        return Err(Error::InvalidConfig(format!("march needs t0 ≤ t1, got [{t0}, {t1}]")));
    }
    Ok(((t1 - t0) / p.dt).round() as usize)
}

/// Marches `d0` across `[t0, t1]`, returning every intermediate state
/// (`d0` first). In `BackwardFactor` mode `d0` is `φ` at the later time and
/// the states run backward in physical time.
pub fn march(p: &FpkProblem, d0: &GridDensity, t0: f64, t1: f64, mode: MarchMode) -> Result<Vec<GridDensity>> {
    let steps = step_count(p, t0, t1)?;
    let mut out = Vec::with_capacity(steps + 1);
    march_observed(p, d0, steps, mode, |_, v| {
        out.push(GridDensity::from_raw(p.grid.clone(), v.to_vec()).with_flag(d0.is_normalized() && mode == MarchMode::Forward))
    })?;
    Ok(out)
}

/// Streaming march: `observe(k, values)` sees the state after `k` steps,
/// `k = 0..=steps`, without the march retaining them.
pub fn march_observed<F>(p: &FpkProblem, d0: &GridDensity, steps: usize, mode: MarchMode, mut observe: F) -> Result<GridDensity>
where
    F: FnMut(usize, &[f64]),
{
    p.check(d0)?;
    let mut v = match mode {
        MarchMode::Forward => d0.values().to_vec(),
        MarchMode::BackwardFactor => {
            d0.require_positive()?;
            p.to_p(d0.values())
        }
    };
    let mut phi = vec![0.0; v.len()];
    let emit = |v: &[f64], phi: &mut Vec<f64>, k: usize, observe: &mut F| match mode {
        MarchMode::Forward => observe(k, v),
        MarchMode::BackwardFactor => {
            for ((o, p), g) in phi.iter_mut().zip(v).zip(&p.gibbs) {
                *o = p / g;
            }
            observe(k, phi)
        }
    };
    emit(&v, &mut phi, 0, &mut observe);
    for k in 1..=steps {
        p.step_values(&mut v, mode == MarchMode::BackwardFactor)?;
        emit(&v, &mut phi, k, &mut observe);
    }
    let last = match mode {
        MarchMode::Forward => v,
        MarchMode::BackwardFactor => p.from_p(&v),
    };
    GridDensity::new(p.grid.clone(), last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::PolynomialPotential;
    use crate::kernel1d::ReflectedHeatKernel;
    use proptest::prelude::*;

    fn line(a: f64, b: f64, n: usize) -> Grid {
        Grid::uniform(BoxDomain::interval(a, b).unwrap(), n).unwrap()
    }

    fn quad(c2: f64) -> DriftSpec {
        DriftSpec::gradient(PolynomialPotential { coefficients: vec![(c2, 0.0)] })
    }

    fn cubic_2d() -> DriftSpec {
        DriftSpec::gradient(PolynomialPotential { coefficients: vec![(0.2, 0.0), (0.0, 0.2)] })
    }

    fn rho0(x: f64) -> f64 {
        1.0 + (x * x - 16.0).powi(2) * (-x / 2.0).exp()
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-6) - (1e-6 / (1e-6f64).exp_m1())).abs() < 1e-15);
        assert_eq!(bernoulli(800.0), 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-12);
        // B(−z) = B(z) + z
        for z in [-3.0, -0.1, 0.5, 7.0] {
            assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-13);
        }
    }

    #[test]
    fn uniform_is_stationary_without_drift() {
        let p = FpkProblem::new(line(-4.0, 4.0, 101), DriftSpec::Zero, 0.5, 1e-3).unwrap();
        let d = GridDensity::constant(p.grid().clone(), 0.125).unwrap();
        let out = step_forward(&p, &d).unwrap();
        assert!(out.linf_distance(&d).unwrap() < 1e-16);
    }

    #[test]
    fn bump_step_conserves_mass_and_sign() {
        let p = FpkProblem::new(line(-4.0, 4.0, 801), DriftSpec::Zero, 0.5, 1e-3).unwrap();
        let d = GridDensity::from_fn(p.grid().clone(), |x| (-x[0] * x[0] / 0.02).exp()).unwrap().normalize().unwrap();
        let out = step_forward(&p, &d).unwrap();
        assert!((out.trapezoid_mass() - 1.0).abs() <= 1e-12);
        assert!(out.min_value() >= 0.0);
    }

    #[test]
    fn gibbs_density_is_a_fixed_point() {
        for (grid, drift) in [
            (line(-4.0, 4.0, 401), quad(0.2)),
            (Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 61).unwrap(), cubic_2d()),
        ] {
            for splitting in [Splitting::Lod, Splitting::Coupled] {
                let p = FpkProblem::with_splitting(grid.clone(), drift.clone(), 0.5, 1e-3, splitting).unwrap();
                let g = GridDensity::from_fn(grid.clone(), |x| (-drift.potential(x) / 0.5).exp()).unwrap().normalize().unwrap();
                let out = step_forward(&p, &g).unwrap();
                let rel = out.linf_distance(&g).unwrap() / g.peak();
                assert!(rel <= 1e-9, "{splitting:?}: {rel:e}");
            }
        }
    }

    #[test]
    fn backward_equals_forward_without_drift() {
        let p = FpkProblem::new(line(-1.0, 1.0, 51), DriftSpec::Zero, 0.5, 1e-2).unwrap();
        let d = GridDensity::from_fn(p.grid().clone(), |x| 2.0 + x[0].sin()).unwrap();
        let f = step_forward(&p, &d).unwrap();
        let b = step_backward_factor(&p, &d).unwrap();
        assert!(f.linf_distance(&b).unwrap() < 1e-15);
    }

    #[test]
    fn constant_factor_is_preserved() {
        let grids = [line(-4.0, 4.0, 201), Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 41).unwrap()];
        let drifts = [quad(0.2), cubic_2d()];
        for (grid, drift) in grids.into_iter().zip(drifts) {
            let p = FpkProblem::new(grid.clone(), drift, 0.5, 1e-3).unwrap();
            let c = GridDensity::constant(grid, 3.0).unwrap();
            let out = step_backward_factor(&p, &c).unwrap();
            assert!(out.values().iter().all(|v| (v - 3.0).abs() <= 1e-10), "{}", out.linf_distance(&c).unwrap());
        }
    }

    #[test]
    fn p_transform_round_trip() {
        let p = FpkProblem::new(line(-4.0, 4.0, 201), quad(0.2), 0.5, 1e-3).unwrap();
        let phi: Vec<f64> = p.grid().sample(|x| 1.0 + x[0].cos().powi(2));
        let back = p.from_p(&p.to_p(&phi));
        for (a, b) in phi.iter().zip(back) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * a);
        }
    }

    #[test]
    fn zero_length_march_returns_input() {
        let p = FpkProblem::new(line(0.0, 1.0, 11), DriftSpec::Zero, 0.5, 1e-3).unwrap();
        let d = GridDensity::constant(p.grid().clone(), 1.0).unwrap();
        let snaps = march(&p, &d, 0.3, 0.3, MarchMode::Forward).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].values(), d.values());
        assert!(march(&p, &d, 0.5, 0.3, MarchMode::Forward).is_err());
    }

    #[test]
    fn forward_march_matches_kernel_and_conserves_mass() {
        let grid = line(-4.0, 4.0, 801);
        let p = FpkProblem::new(grid.clone(), DriftSpec::Zero, 0.5, 1e-3).unwrap();
        let d0 = GridDensity::from_fn(grid.clone(), |x| rho0(x[0])).unwrap().normalize().unwrap();
        let snaps = march(&p, &d0, 0.0, 1.0, MarchMode::Forward).unwrap();
        assert_eq!(snaps.len(), 1001);
        for s in &snaps {
            assert!((s.trapezoid_mass() - 1.0).abs() <= 1e-10);
        }
        let k = ReflectedHeatKernel::new(grid.domain(), 0.5, 100).unwrap();
        let exact = k.operator(&grid, 1.0).unwrap().apply(d0.values());
        let err = snaps[1000].values().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 5e-4, "{err:e}");
    }

    #[test]
    fn backward_march_matches_kernel_integral() {
        let grid = line(-4.0, 4.0, 801);
        let p = FpkProblem::new(grid.clone(), DriftSpec::Zero, 0.5, 1e-3).unwrap();
        let phi1 = GridDensity::from_fn(grid.clone(), |x| 0.5 + (-(x[0] - 1.0).powi(2)).exp()).unwrap();
        let phi0 = march_observed(&p, &phi1, 1000, MarchMode::BackwardFactor, |_, _| {}).unwrap();
        let k = ReflectedHeatKernel::new(grid.domain(), 0.5, 100).unwrap();
        let exact = k.operator(&grid, 1.0).unwrap().apply(phi1.values());
        let err = phi0.values().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 5e-4, "{err:e}");
    }

    #[test]
    fn left_half_plane_gains_mass_in_2d() {
        let grid = Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 41).unwrap();
        let p = FpkProblem::new(grid.clone(), cubic_2d(), 0.5, 1e-2).unwrap();
        let d0 = GridDensity::from_fn(grid.clone(), |x| (-(x[0] - 2.0).powi(2) - (x[1] - 1.0).powi(2)).exp())
            .unwrap()
            .normalize()
            .unwrap();
        // the cubic term pushes mass toward x₂ = −4, the quadratic one toward x₁ = 0
        let lower_half = |d: &GridDensity| {
            let v: Vec<f64> = d.values().iter().enumerate().map(|(k, v)| if grid.nodes()[k][1] <= 0.0 { *v } else { 0.0 }).collect();
            crate::density::trapezoid(&grid, &v)
        };
        let d1 = march_observed(&p, &d0, 200, MarchMode::Forward, |_, _| {}).unwrap();
        assert!(lower_half(&d1) > lower_half(&d0) + 0.1);
        assert!((d1.trapezoid_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_step_converges_to_coupled_step_at_first_order() {
        let grid = Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 41).unwrap();
        let d0 = GridDensity::from_fn(grid.clone(), |x| 1.0 + (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap().normalize().unwrap();
        let gap = |dt: f64| {
            let steps = (0.02 / dt).round() as usize;
            let lod = FpkProblem::new(grid.clone(), cubic_2d(), 0.5, dt).unwrap();
            let cpl = FpkProblem::with_splitting(grid.clone(), cubic_2d(), 0.5, dt, Splitting::Coupled).unwrap();
            let a = march_observed(&lod, &d0, steps, MarchMode::Forward, |_, _| {}).unwrap();
            let b = march_observed(&cpl, &d0, steps, MarchMode::Forward, |_, _| {}).unwrap();
            assert!((b.trapezoid_mass() - 1.0).abs() < 1e-10);
            a.linf_distance(&b).unwrap()
        };
        let (coarse, fine) = (gap(2e-3), gap(1e-3));
        let order = (coarse / fine).log2();
        assert!(order > 0.8, "{coarse:e} {fine:e}");
    }

    #[test]
    fn forward_and_backward_marches_are_adjoint() {
        // Σ w φ_t φ̂_t is constant in t: the discrete analogue of ρ = φφ̂ keeping unit mass.
        let grid = Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 31).unwrap();
        let p = FpkProblem::new(grid.clone(), cubic_2d(), 0.5, 1e-2).unwrap();
        let phihat0 = GridDensity::from_fn(grid.clone(), |x| 1.0 + (-(x[0] * x[0])).exp()).unwrap();
        let phi1 = GridDensity::from_fn(grid.clone(), |x| 2.0 + x[1].sin()).unwrap();
        let mut fwd = Vec::new();
        march_observed(&p, &phihat0, 10, MarchMode::Forward, |_, v| fwd.push(v.to_vec())).unwrap();
        let mut bwd = Vec::new();
        march_observed(&p, &phi1, 10, MarchMode::BackwardFactor, |_, v| bwd.push(v.to_vec())).unwrap();
        let pairing = |k: usize| {
            let prod: Vec<f64> = fwd[k].iter().zip(&bwd[10 - k]).map(|(a, b)| a * b).collect();
            crate::density::trapezoid(&grid, &prod)
        };
        let m0 = pairing(0);
        for k in 1..=10 {
            assert!((pairing(k) - m0).abs() <= 1e-12 * m0, "{k}: {} vs {m0}", pairing(k));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn steps_preserve_mass_and_positivity(vals in proptest::collection::vec(0.0..10.0f64, 40), c2 in -0.5..0.5f64, dt in 1e-4..1e-1f64) {
            let grid = line(-2.0, 3.0, 40);
            let p = FpkProblem::new(grid.clone(), quad(c2), 0.5, dt).unwrap();
            let d = GridDensity::new(grid, vals).unwrap();
            let out = step_forward(&p, &d).unwrap();
            prop_assert!(out.min_value() >= 0.0);
            prop_assert!((out.trapezoid_mass() - d.trapezoid_mass()).abs() <= 1e-12 * (1.0 + d.trapezoid_mass()));
        }

        #[test]
        fn steps_preserve_mass_and_positivity_2d(vals in proptest::collection::vec(0.0..10.0f64, 100), dt in 1e-4..1e-1f64) {
            let grid = Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 10).unwrap();
            let p = FpkProblem::new(grid.clone(), cubic_2d(), 0.5, dt).unwrap();
            let d = GridDensity::new(grid, vals).unwrap();
            let out = step_forward(&p, &d).unwrap();
            prop_assert!(out.min_value() >= 0.0);
            prop_assert!((out.trapezoid_mass() - d.trapezoid_mass()).abs() <= 1e-12 * (1.0 + d.trapezoid_mass()));
        }
    }
}
