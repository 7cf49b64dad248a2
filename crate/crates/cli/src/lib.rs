//! Scenario runner behind the `rsbridge` binary.
//!
//! Every subcommand writes its artifacts into one output directory and
//! finishes with a JSON manifest; the process exit code summarizes the run.

pub mod artifacts;
pub mod commands;
pub mod expr;
pub mod scenario;

pub use commands::{kernel_check, run_simulate, run_solve, validate, KernelCheckArgs, KernelReport, SimulateArgs};
pub use scenario::{Problem, Scenario};

/// Exit status of a subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Config = 2,
    NoConvergence = 3,
    Invariant = 4,
    MissingPrerequisite = 5,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Solver(#[from] rsbridge::Error),

    #[error("missing solution artifacts: {0}")]
    MissingSolution(String),

    #[error("invariant check failed: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit(&self) -> Exit {
        use rsbridge::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => Exit::Config,
            CliError::MissingSolution(_) => Exit::MissingPrerequisite,
            CliError::Invariant(_) => Exit::Invariant,
            CliError::Solver(e) => match e {
                E::MaxIterations { .. } | E::ProxNoConverge { .. } | E::LinearSolveFailure(_) | E::Diverged { .. } => Exit::NoConvergence,
                E::FloorDominant { .. } | E::NonPositive { .. } | E::ControlOutOfRange(_) => Exit::Invariant,
                _ => Exit::Config,
            },
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}
