use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The steering horizon is always `[0, 1]`.
pub const HORIZON: f64 = 1.0;

/// Numerical settings shared by the bridge solvers and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Thermodynamic temperature; the noise intensity is `√(2θ)`.
    pub theta: f64,
    /// Time steps across the horizon (FV marching and SDE integration).
    pub time_steps: usize,
    /// Cosine-series truncation of the reflected heat kernel.
    pub series_terms: usize,
    /// Hilbert-metric residual at which the fixed point is declared converged.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Relative floor (times the peak of the divisor) used by Hadamard division.
    pub density_floor: f64,
    /// Number of uniformly spaced reconstruction snapshots, endpoints included.
    pub snapshots: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            time_steps: 1000,
            series_terms: 100,
            fp_tol: 1e-9,
            fp_max_iter: 200,
            density_floor: 1e-12,
            snapshots: 11,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if self.time_steps == 0 {
            return bad("time_steps must be positive".into());
        }
        if self.series_terms == 0 {
            return bad("series_terms must be positive".into());
        }
        if !(self.fp_tol > 0.0) {
            return bad(format!("fp_tol must be positive, got {}", self.fp_tol));
        }
        if self.fp_max_iter == 0 {
            return bad("fp_max_iter must be positive".into());
        }
        if !(self.density_floor > 0.0 && self.density_floor <= 1e-6) {
            return bad(format!("density_floor must lie in (0, 1e-6], got {}", self.density_floor));
        }
        if self.snapshots < 2 {
            return bad(format!("need at least 2 snapshots, got {}", self.snapshots));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        HORIZON / self.time_steps as f64
    }

    /// Snapshot times `0, 1/(k−1), …, 1`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let k = self.snapshots - 1;
        (0..=k).map(|i| if i == k { HORIZON } else { i as f64 / k as f64 }).collect()
    }
}
