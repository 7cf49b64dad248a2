//! Fixed-point solution of the Schrödinger system.
//!
//! One loop of the recursion maps the terminal factor `φ₁` to a new one:
//! march `φ₁` backward to `φ₀`, set `φ̂₀ = ρ₀ ⊘ φ₀`, march `φ̂₀` forward to
//! `φ̂₁`, set `φ₁ = ρ₁ ⊘ φ̂₁`. The loop contracts in Hilbert's projective
//! metric. The converged factors give the optimal density `ρ = φ·φ̂` and the
//! optimal feedback `u = 2θ∇log φ`.

mod control;
mod engine;

pub use control::{control_from_factor, ControlField};
pub use engine::{Engine, KernelEngine};

use log::{debug, info};

use crate::config::SolverConfig;
use crate::density::GridDensity;
use crate::error::{Error, Result};

/// Fraction of support nodes allowed to hit the division floor.
pub const FLOOR_BUDGET: f64 = 0.01;

/// `log max(u/v) − log min(u/v)`.
pub fn hilbert_metric(u: &GridDensity, v: &GridDensity) -> Result<f64> {
    u.same_grid(v)?;
    u.require_positive()?;
    v.require_positive()?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in u.values().iter().zip(v.values()) {
        let r = a.ln() - b.ln();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(hi - lo)
}

/// How the projective scale `(αφ₁, φ̂₀/α)` is pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `φ̂₀` has unit trapezoid mass.
    #[default]
    UnitPhiHat0,
}

/// Boundary data of the Schrödinger factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub phi1: GridDensity,
    pub phihat0: GridDensity,
    pub normalization: Normalization,
}

impl FactorPair {
    /// Initial guess `φ₁ ≡ c` (with a flat `φ̂₀` that the first loop overwrites).
    pub fn constant(grid: &crate::domain::Grid, c: f64) -> Result<Self> {
        Ok(Self {
            phi1: GridDensity::constant(grid.clone(), c)?,
            phihat0: GridDensity::constant(grid.clone(), 1.0)?.normalize()?,
            normalization: Normalization::UnitPhiHat0,
        })
    }
}

/// `num ⊘ den` with the divisor floored at `floor·max(den)` and the quotient at
/// `floor·max(quotient)`, so the result is strictly positive. Also returns how
/// many nodes of the support of `num` needed the divisor floor, and the
/// support size.
pub fn hadamard_divide(num: &GridDensity, den: &[f64], floor: f64) -> Result<(GridDensity, usize, usize)> {
    let den_floor = floor * den.iter().copied().fold(0.0, f64::max);
    let num_floor = floor * num.peak();
    let mut floored = 0;
    let mut support = 0;
    let mut q: Vec<f64> = num
        .values()
        .iter()
        .zip(den)
        .map(|(&n, &d)| {
            let in_support = n > num_floor;
            support += in_support as usize;
            if d < den_floor || !(d > 0.0) {
                floored += in_support as usize;
                n / den_floor
            } else {
                n / d
            }
        })
        .collect();
    let q_floor = floor * q.iter().copied().fold(0.0, f64::max);
    if !(q_floor > 0.0 && q_floor.is_finite()) {
        return Err(Error::ZeroMass(q_floor));
    }
    q.iter_mut().for_each(|v| *v = v.max(q_floor));
    Ok((GridDensity::new(num.grid().clone(), q)?, floored, support))
}

fn divide_checked(num: &GridDensity, den: &[f64], floor: f64) -> Result<GridDensity> {
    let (q, floored, support) = hadamard_divide(num, den, floor)?;
    if floored > 0 {
        debug!("division floor hit at {floored} of {support} support nodes");
    }
    if floored as f64 > FLOOR_BUDGET * support as f64 {
        return Err(Error::FloorDominant { floored, support });
    }
    Ok(q)
}

/// One loop of the recursion from `fp.phi1`.
pub fn half_bridge(fp: &FactorPair, engine: &Engine, rho0: &GridDensity, rho1: &GridDensity, density_floor: f64) -> Result<FactorPair> {
    fp.phi1.require_positive()?;
    let grid = engine.grid();
    if fp.phi1.grid() != grid || rho0.grid() != grid || rho1.grid() != grid {
        return Err(Error::DomainMismatch);
    }
    let phi0 = engine.backward(fp.phi1.values())?;
    let phihat0 = divide_checked(rho0, &phi0, density_floor)?.normalize()?;
    let phihat1 = engine.forward(phihat0.values())?;
    let phi1 = divide_checked(rho1, &phihat1, density_floor)?;
    Ok(FactorPair { phi1, phihat0, normalization: Normalization::UnitPhiHat0 })
}

/// Hilbert-metric change of both iterates in one loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub iteration: usize,
    pub phi1: f64,
    pub phihat0: f64,
}

impl Residual {
    pub fn max(&self) -> f64 {
        self.phi1.max(self.phihat0)
    }
}

/// Factors, density and control at one reconstruction time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub phi: GridDensity,
    pub phihat: GridDensity,
    pub rho: GridDensity,
    /// `control[axis][node]`.
    pub control: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BridgeSolution {
    pub snapshots: Vec<Snapshot>,
    pub residual_trace: Vec<Residual>,
    pub factors: FactorPair,
    engine: Engine,
    density_floor: f64,
}

impl BridgeSolution {
    pub fn iterations(&self) -> usize {
        self.residual_trace.len()
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn theta(&self) -> f64 {
        self.engine.theta()
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() < 1e-12)
    }

    /// `φ(t, ·)` at arbitrary times, reconstructed from the converged `φ₁`.
    pub fn phi_at(&self, times: &[f64]) -> Result<Vec<GridDensity>> {
        let grid = self.engine.grid();
        self.engine
            .phi_at(self.factors.phi1.values(), times)?
            .into_iter()
            .map(|v| floor_factor(grid, v, self.density_floor))
            .collect()
    }

    /// Control sampled at the given increasing times.
    pub fn control_schedule(&self, times: &[f64]) -> Result<ControlField> {
        control_schedule(&self.engine, &self.factors.phi1, times, self.density_floor)
    }

    /// Control sampled at the reconstruction snapshots.
    pub fn control_snapshots(&self) -> Result<ControlField> {
        let times = self.snapshots.iter().map(|s| s.t).collect();
        let values = self.snapshots.iter().map(|s| s.control.clone()).collect();
        ControlField::new(self.engine.grid().clone(), times, values)
    }
}

/// Reconstructed factors are positive in exact arithmetic; truncation can
/// leave nodes at rounding level, which are lifted to the division floor.
fn floor_factor(grid: &crate::domain::Grid, mut v: Vec<f64>, floor: f64) -> Result<GridDensity> {
    let lift = floor * v.iter().copied().fold(0.0, f64::max);
    let mut lifted = 0;
    for x in v.iter_mut() {
        if !(*x >= lift) {
            *x = lift;
            lifted += 1;
        }
    }
    if lifted > 0 {
        debug!("lifted {lifted} reconstructed factor values to the floor");
    }
    GridDensity::new(grid.clone(), v)
}

/// Control at the given increasing times from a converged terminal factor
/// `φ₁`, e.g. one read back from disk.
pub fn control_schedule(engine: &Engine, phi1: &GridDensity, times: &[f64], density_floor: f64) -> Result<ControlField> {
    let grid = engine.grid();
    if phi1.grid() != grid {
        return Err(Error::DomainMismatch);
    }
    let values = engine
        .phi_at(phi1.values(), times)?
        .into_iter()
        .map(|v| control_from_factor(grid, engine.theta(), floor_factor(grid, v, density_floor)?.values()))
        .collect::<Result<Vec<_>>>()?;
    ControlField::new(grid.clone(), times.to_vec(), values)
}

/// `u_opt(t, ·) = 2θ∇log φ(t, ·)`.
pub fn control_field(sol: &BridgeSolution, t: f64) -> Result<Vec<Vec<f64>>> {
    let phi = sol.phi_at(&[t])?;
    control_from_factor(sol.engine.grid(), sol.theta(), phi[0].values())
}

fn check_endpoint(d: &GridDensity, name: &str) -> Result<()> {
    let mass = d.trapezoid_mass();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("{name} must be normalized, mass = {mass}")));
    }
    Ok(())
}

/// Solves from the guess `φ₁ ≡ 1`.
pub fn solve(rho0: &GridDensity, rho1: &GridDensity, config: &SolverConfig, engine: Engine) -> Result<BridgeSolution> {
    let guess = FactorPair::constant(engine.grid(), 1.0)?;
    solve_from(rho0, rho1, config, engine, guess)
}

/// Iterates [`half_bridge`] from `guess` until both Hilbert residuals drop
/// below `fp_tol`, then reconstructs `config.snapshots` uniform snapshots.
pub fn solve_from(rho0: &GridDensity, rho1: &GridDensity, config: &SolverConfig, engine: Engine, guess: FactorPair) -> Result<BridgeSolution> {
    config.validate()?;
    check_endpoint(rho0, "rho0")?;
    check_endpoint(rho1, "rho1")?;
    let mut fp = guess;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.fp_max_iter {
        let next = half_bridge(&fp, &engine, rho0, rho1, config.density_floor)?;
        let r = Residual {
            iteration,
            phi1: hilbert_metric(&next.phi1, &fp.phi1)?,
            phihat0: hilbert_metric(&next.phihat0, &fp.phihat0)?,
        };
        debug!("iteration {iteration}: d(φ₁) = {:.3e}, d(φ̂₀) = {:.3e}", r.phi1, r.phihat0);
        trace.push(r);
        fp = next;
        if r.max() < config.fp_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let residual = trace.last().map(|r| r.max()).unwrap_or(f64::INFINITY);
        return Err(Error::MaxIterations { iterations: config.fp_max_iter, residual });
    }
    info!("{} engine converged in {} iterations", engine.name(), trace.len());

    let times = config.snapshot_times();
    let grid = engine.grid().clone();
    let phis = engine.phi_at(fp.phi1.values(), &times)?;
    let phihats = engine.phihat_at(fp.phihat0.values(), &times)?;
    let mut snapshots = Vec::with_capacity(times.len());
    for ((t, phi), phihat) in times.into_iter().zip(phis).zip(phihats) {
        let phi = floor_factor(&grid, phi, config.density_floor)?;
        let phihat = GridDensity::new(grid.clone(), phihat)?;
        let rho = phi.hadamard(&phihat)?;
        let control = control_from_factor(&grid, engine.theta(), phi.values())?;
        snapshots.push(Snapshot { t, phi, phihat, rho, control });
    }
    Ok(BridgeSolution { snapshots, residual_trace: trace, factors: fp, engine, density_floor: config.density_floor })
}
