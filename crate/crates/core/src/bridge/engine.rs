use std::sync::Arc;

use crate::density::GridDensity;
use crate::domain::Grid;
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fpk::{march_observed, FpkProblem, MarchMode};
use crate::kernel1d::{CosineBasis, KernelOperator, ReflectedHeatKernel, Route};

/// Propagator for the two Kolmogorov equations of the Schrödinger system.
#[derive(Debug, Clone)]
pub enum Engine {
    /// Zero drift: closed-form reflected heat kernel, tensorized in 2D.
    Kernel(KernelEngine),
    /// Gradient drift (or zero): implicit finite volumes.
    Fpk(FpkProblem),
}

impl From<FpkProblem> for Engine {
    fn from(p: FpkProblem) -> Self {
        Engine::Fpk(p)
    }
}

impl From<KernelEngine> for Engine {
    fn from(k: KernelEngine) -> Self {
        Engine::Kernel(k)
    }
}

#[derive(Debug, Clone)]
pub struct KernelEngine {
    grid: Grid,
    theta: f64,
    series_terms: usize,
    /// One kernel and one horizon operator per axis.
    kernels: Vec<ReflectedHeatKernel>,
    horizon: Vec<KernelOperator>,
}

impl KernelEngine {
    pub fn new(grid: Grid, theta: f64, series_terms: usize) -> Result<Self> {
        let mut kernels = Vec::new();
        let mut horizon = Vec::new();
        for axis in 0..grid.dim() {
            let g = grid.axis_grid(axis);
            let k = ReflectedHeatKernel::new(g.domain(), theta, series_terms)?;
            horizon.push(k.operator(&g, 1.0)?);
            kernels.push(k);
        }
        Ok(Self { grid, theta, series_terms, kernels, horizon })
    }

    pub fn from_kernel(kernel: &ReflectedHeatKernel, grid: Grid) -> Result<Self> {
        Self::new(grid, kernel.theta(), kernel.series_terms())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Operators at time `s`, one per axis.
    fn operators(&self, s: f64, bases: &[Arc<CosineBasis>]) -> Result<Vec<KernelOperator>> {
        self.kernels.iter().zip(bases).map(|(k, b)| k.operator_with(b, s)).collect()
    }

    /// Bases large enough for every time in `times` without switching to the image sum.
    fn bases_for(&self, times: &[f64]) -> Vec<Arc<CosineBasis>> {
        self.kernels
            .iter()
            .enumerate()
            .map(|(axis, k)| {
                let terms = times
                    .iter()
                    .filter(|s| **s > 0.0)
                    .map(|&s| match k.route(s) {
                        Route::Cosine(m) => m,
                        Route::Images(_) => 0,
                    })
                    .max()
                    .unwrap_or(0)
                    .max(self.series_terms);
                Arc::new(CosineBasis::new(k, &self.grid.axis_grid(axis), terms))
            })
            .collect()
    }

    fn apply(&self, ops: &[KernelOperator], f: &[f64]) -> Vec<f64> {
        if self.grid.dim() == 1 {
            return ops[0].apply(f);
        }
        let (n0, n1) = (self.grid.points()[0], self.grid.points()[1]);
        let mut out = vec![0.0; f.len()];
        for j in 0..n1 {
            let col: Vec<f64> = (0..n0).map(|i| f[i * n1 + j]).collect();
            for (i, v) in ops[0].apply(&col).into_iter().enumerate() {
                out[i * n1 + j] = v;
            }
        }
        for row in out.chunks_mut(n1) {
            let r = ops[1].apply(row);
            row.copy_from_slice(&r);
        }
        out
    }
}

impl Engine {
    pub fn grid(&self) -> &Grid {
        match self {
            Engine::Kernel(k) => &k.grid,
            Engine::Fpk(p) => p.grid(),
        }
    }

    pub fn theta(&self) -> f64 {
        match self {
            Engine::Kernel(k) => k.theta,
            Engine::Fpk(p) => p.theta(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Kernel(_) => "kernel",
            Engine::Fpk(_) => "fpk",
        }
    }

    /// The kernel engine only covers the driftless prior.
    pub fn check_drift(&self, drift: &DriftSpec) -> Result<()> {
        match (self, drift) {
            (Engine::Kernel(_), DriftSpec::GradientPotential(_)) => {
                Err(Error::EngineMismatch("the kernel engine needs zero drift; use the fpk engine".into()))
            }
            _ => Ok(()),
        }
    }

    fn steps(p: &FpkProblem) -> usize {
        (1.0 / p.dt()).round() as usize
    }

    /// `φ₀` from `φ₁` across the whole horizon.
    pub fn backward(&self, phi1: &[f64]) -> Result<Vec<f64>> {
        match self {
            Engine::Kernel(k) => Ok(k.apply(&k.horizon, phi1)),
            Engine::Fpk(p) => {
                let d = GridDensity::new(p.grid().clone(), phi1.to_vec())?;
                Ok(march_observed(p, &d, Self::steps(p), MarchMode::BackwardFactor, |_, _| {})?.into_values())
            }
        }
    }

    /// `φ̂₁` from `φ̂₀` across the whole horizon.
    pub fn forward(&self, phihat0: &[f64]) -> Result<Vec<f64>> {
        match self {
            Engine::Kernel(k) => Ok(k.apply(&k.horizon, phihat0)),
            Engine::Fpk(p) => {
                let d = GridDensity::new(p.grid().clone(), phihat0.to_vec())?;
                Ok(march_observed(p, &d, Self::steps(p), MarchMode::Forward, |_, _| {})?.into_values())
            }
        }
    }

    /// `φ(t, ·)` at each requested time, from the terminal factor `φ₁`.
    pub fn phi_at(&self, phi1: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.propagate(phi1, times, true)
    }

    /// `φ̂(t, ·)` at each requested time, from the initial factor `φ̂₀`.
    pub fn phihat_at(&self, phihat0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.propagate(phihat0, times, false)
    }

    fn propagate(&self, f: &[f64], times: &[f64], backward: bool) -> Result<Vec<Vec<f64>>> {
        if let Some(&t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidConfig(format!("reconstruction time {t} outside [0, 1]")));
        }
        let elapsed: Vec<f64> = times.iter().map(|&t| if backward { 1.0 - t } else { t }).collect();
        match self {
            Engine::Kernel(k) => {
                let bases = k.bases_for(&elapsed);
                elapsed
                    .iter()
                    .map(|&s| if s <= 0.0 { Ok(f.to_vec()) } else { Ok(k.apply(&k.operators(s, &bases)?, f)) })
                    .collect()
            }
            Engine::Fpk(p) => {
                let total = Self::steps(p);
                let idx: Vec<usize> = elapsed.iter().map(|s| ((s * total as f64).round() as usize).min(total)).collect();
                let last = idx.iter().copied().max().unwrap_or(0);
                let mut out = vec![Vec::new(); times.len()];
                let mode = if backward { MarchMode::BackwardFactor } else { MarchMode::Forward };
                let d = GridDensity::new(p.grid().clone(), f.to_vec())?;
                march_observed(p, &d, last, mode, |k, v| {
                    for (slot, &want) in out.iter_mut().zip(&idx) {
                        if want == k {
                            *slot = v.to_vec();
                        }
                    }
                })?;
                Ok(out)
            }
        }
    }
}
