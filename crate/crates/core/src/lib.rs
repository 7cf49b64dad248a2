//! Solvers for the reflected Schrödinger bridge problem: steer a density
//! `ρ₀` to `ρ₁` over `t ∈ [0, 1]` with minimum control effort, under a
//! controlled diffusion that reflects off the faces of a box.

pub mod bridge;
pub mod config;
pub mod density;
pub mod domain;
pub mod drift;
pub mod error;
pub mod fpk;
pub mod kernel1d;
pub mod linalg;
pub mod sde;

pub use bridge::{BridgeSolution, ControlField, Engine, FactorPair, KernelEngine};
pub use config::{SolverConfig, HORIZON};
pub use density::{normalize, trapezoid_mass, GridDensity};
pub use domain::{BoxDomain, Grid};
pub use drift::{DriftSpec, FnPotential, PolynomialPotential, Potential};
pub use error::{Error, Result};
pub use fpk::{FpkProblem, LyapunovFunctional, MarchMode, Splitting};
pub use kernel1d::ReflectedHeatKernel;
pub use sde::{PathEnsemble, Reflection, SimOptions};
