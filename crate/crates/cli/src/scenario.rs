//! Self-contained scenario documents.

use std::path::Path;

use rsbridge::bridge::{Engine, KernelEngine};
use rsbridge::fpk::{FpkProblem, Splitting};
use rsbridge::{BoxDomain, DriftSpec, Grid, GridDensity, SolverConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::expr::{Expr, ExprPotential};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

const BUNDLED_1D: &str = include_str!("../scenarios/paper-1d.json");
const BUNDLED_2D: &str = include_str!("../scenarios/paper-2d.json");

/// Names of the scenarios compiled into the binary.
pub const BUNDLED: [&str; 2] = ["paper-1d", "paper-2d"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Kernel,
    Fpk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplittingKind {
    #[default]
    Lod,
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DriftDoc {
    #[default]
    Zero,
    /// `f = −∇V` with `V` given as an expression.
    Potential { expr: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Snapshots,
    ResidualTrace,
    Factors,
}

fn all_outputs() -> Vec<Output> {
    vec![Output::Snapshots, Output::ResidualTrace, Output::Factors]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverDoc {
    pub time_steps: usize,
    pub series_terms: usize,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub density_floor: f64,
    pub snapshots: usize,
    pub splitting: SplittingKind,
}

impl Default for SolverDoc {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            time_steps: c.time_steps,
            series_terms: c.series_terms,
            fp_tol: c.fp_tol,
            fp_max_iter: c.fp_max_iter,
            density_floor: c.density_floor,
            snapshots: c.snapshots,
            splitting: SplittingKind::Lod,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationDoc {
    pub paths: usize,
    pub seed: u64,
    pub record_every: usize,
    /// Times at which the closed-loop control is sampled, endpoints included.
    pub control_times: usize,
    /// Points per axis of the histogram grid for terminal marginals.
    pub histogram_points: usize,
}

impl Default for SimulationDoc {
    fn default() -> Self {
        Self { paths: 10_000, seed: 0, record_every: 10, control_times: 201, histogram_points: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub domain: BoxDomain,
    /// Grid points per axis.
    pub points: Vec<usize>,
    pub theta: f64,
    #[serde(default)]
    pub drift: DriftDoc,
    /// Unnormalized endpoint densities.
    pub rho0: String,
    pub rho1: String,
    pub engine: EngineKind,
    #[serde(default)]
    pub solver: SolverDoc,
    #[serde(default)]
    pub simulation: SimulationDoc,
    #[serde(default = "all_outputs")]
    pub outputs: Vec<Output>,
}

/// A scenario evaluated on its grid.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub grid: Grid,
    pub drift: DriftSpec,
    pub rho0: GridDensity,
    pub rho1: GridDensity,
    pub config: SolverConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        Ok(s)
    }

    /// A bundled scenario by name, or a JSON file by path.
    pub fn load(spec: &str) -> Result<Self, CliError> {
        match spec {
            "paper-1d" => Self::from_json(BUNDLED_1D),
            "paper-2d" => Self::from_json(BUNDLED_2D),
            path => {
                let text = std::fs::read_to_string(Path::new(path))
                    .map_err(|e| CliError::Config(format!("cannot read scenario `{path}`: {e}")))?;
                Self::from_json(&text)
            }
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            theta: self.theta,
            time_steps: self.solver.time_steps,
            series_terms: self.solver.series_terms,
            fp_tol: self.solver.fp_tol,
            fp_max_iter: self.solver.fp_max_iter,
            density_floor: self.solver.density_floor,
            snapshots: self.solver.snapshots,
        }
    }

    fn density(&self, which: &str, src: &str, grid: &Grid) -> Result<GridDensity, CliError> {
        let e = Expr::parse(src, grid.dim()).map_err(|e| CliError::Config(format!("{which}: {e}")))?;
        let values = grid.sample(|x| e.eval(x));
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            let x = &grid.nodes()[k];
            return Err(CliError::Config(format!("{which} evaluates to {v} at {x:?}; densities must be finite and nonnegative")));
        }
        GridDensity::new(grid.clone(), values)?.normalize().map_err(|e| CliError::Config(format!("{which}: {e}")))
    }

    pub fn drift_spec(&self) -> Result<DriftSpec, CliError> {
        match &self.drift {
            DriftDoc::Zero => Ok(DriftSpec::Zero),
            DriftDoc::Potential { expr } => {
                let p = ExprPotential::parse(expr, self.domain.dim()).map_err(|e| CliError::Config(format!("drift: {e}")))?;
                Ok(DriftSpec::gradient(p))
            }
        }
    }

    /// Validates the document and evaluates everything on the grid.
    pub fn build(&self) -> Result<Problem, CliError> {
        let grid = Grid::new(self.domain.clone(), self.points.clone())?;
        let config = self.config();
        config.validate()?;
        let drift = self.drift_spec()?;
        for (k, x) in grid.nodes().iter().enumerate() {
            let v = drift.potential(x);
            if !v.is_finite() {
                return Err(CliError::Config(format!("potential is {v} at node {k} {x:?}")));
            }
        }
        let rho0 = self.density("rho0", &self.rho0, &grid)?;
        let rho1 = self.density("rho1", &self.rho1, &grid)?;
        Ok(Problem { scenario: self.clone(), grid, drift, rho0, rho1, config })
    }
}

impl Problem {
    pub fn engine(&self) -> Result<Engine, CliError> {
        let engine: Engine = match self.scenario.engine {
            EngineKind::Kernel => KernelEngine::new(self.grid.clone(), self.config.theta, self.config.series_terms)?.into(),
            EngineKind::Fpk => {
                let splitting = match self.scenario.solver.splitting {
                    SplittingKind::Lod => Splitting::Lod,
                    SplittingKind::Coupled => Splitting::Coupled,
                };
                FpkProblem::with_splitting(self.grid.clone(), self.drift.clone(), self.config.theta, self.config.dt(), splitting)?
                    .into()
            }
        };
        engine.check_drift(&self.drift)?;
        Ok(engine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_load_and_build() {
        for name in BUNDLED {
            let s = Scenario::load(name).unwrap();
            assert_eq!(s.name, name);
            let p = s.build().unwrap();
            assert!((p.rho0.trapezoid_mass() - 1.0).abs() < 1e-12);
            assert!((p.rho1.trapezoid_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let s = Scenario::load("paper-1d").unwrap();
        assert_eq!(s.hash(), Scenario::load("paper-1d").unwrap().hash());
        let mut t = s.clone();
        t.theta = 0.25;
        assert_ne!(s.hash(), t.hash());
    }

    #[test]
    fn malformed_expression_is_a_config_error_naming_the_token() {
        let mut s = Scenario::load("paper-1d").unwrap();
        s.rho1 = "1.2 - cos(pi * (x + 4) # 2)".into();
        match s.build() {
            Err(CliError::Config(msg)) => assert!(msg.contains("`#`"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_density_is_rejected() {
        let mut s = Scenario::load("paper-1d").unwrap();
        s.rho0 = "x".into();
        assert!(matches!(s.build(), Err(CliError::Config(_))));
    }

    #[test]
    fn kernel_engine_with_drift_is_rejected() {
        let mut s = Scenario::load("paper-1d").unwrap();
        s.drift = DriftDoc::Potential { expr: "x^2".into() };
        let p = s.build().unwrap();
        assert!(matches!(p.engine(), Err(CliError::Solver(rsbridge::Error::EngineMismatch(_)))));
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        let text = Scenario::load("paper-1d").unwrap();
        let mut v = serde_json::to_value(&text).unwrap();
        v["schema_version"] = 2.into();
        assert!(Scenario::from_json(&v.to_string()).is_err());
        v["schema_version"] = 1.into();
        v["bogus"] = 1.into();
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }
}
