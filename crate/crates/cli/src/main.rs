use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rsbridge_cli::{artifacts, CliError, Exit, KernelCheckArgs, Scenario, SimulateArgs};

#[derive(Parser)]
#[command(name = "rsbridge", version, about = "Reflected Schrödinger bridge solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write snapshots, residual trace, factors and a manifest.
    Solve {
        /// Scenario file, or a bundled name (`paper-1d`, `paper-2d`).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of reconstruction snapshots.
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Simulate the reflected SDE, with the solved control or without any.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the control from a previous `solve` into the same directory.
        #[arg(long)]
        closed_loop: bool,
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Compare the cosine series with the image sum on a 101-node lattice.
    KernelCheck {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        lower: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        upper: f64,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 100)]
        terms: usize,
        #[arg(long, default_value_t = 50)]
        images: usize,
        /// Also write the report as `kernel_check.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the invariant checks on existing artifacts.
    Validate {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(spec: &str, snapshots: Option<usize>) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(spec)?;
    if let Some(k) = snapshots {
        s.solver.snapshots = k;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { scenario, out, snapshots } => {
            let m = rsbridge_cli::run_solve(&load(&scenario, snapshots)?, &out)?;
            println!(
                "{}: {} engine converged in {} iterations (residual {:.3e}); {} snapshots in {}",
                m.scenario.name,
                m.engine,
                m.iterations,
                m.final_residual_phi1.max(m.final_residual_phihat0),
                m.snapshots.len(),
                out.display()
            );
        }
        Command::Simulate { scenario, out, paths, seed, closed_loop, snapshots } => {
            let s = load(&scenario, snapshots)?;
            let args = SimulateArgs {
                paths: paths.unwrap_or(s.simulation.paths),
                seed: seed.unwrap_or(s.simulation.seed),
                closed_loop,
            };
            let m = rsbridge_cli::run_simulate(&s, &out, &args)?;
            let ks = m.ks_terminal_vs_rho1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            println!(
                "{} paths ({}): KS vs rho1 {ks}, L1 vs rho1 {:.4}, L1 vs uncontrolled {:.4}, {} violations",
                m.paths,
                if m.closed_loop { "closed loop" } else { "open loop" },
                m.l1_terminal_vs_rho1,
                m.l1_terminal_vs_uncontrolled,
                m.containment_violations
            );
        }
        Command::KernelCheck { lower, upper, theta, t, terms, images, out } => {
            let report = rsbridge_cli::kernel_check(&KernelCheckArgs { lower, upper, theta, t, terms, images })?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if let Some(dir) = out {
                artifacts::write_json(&dir.join("kernel_check.json"), &report)?;
            }
            if !report.cosine_sufficient {
                eprintln!("note: {terms} cosine terms are not enough at t = {t}; the image sum is used instead");
            }
            if !report.passed() {
                return Err(CliError::Invariant("kernel oracle or positivity check failed".into()));
            }
        }
        Command::Validate { out } => {
            for c in rsbridge_cli::validate(&out)? {
                println!("{:<45} {:>12.3e}  (limit {:e})  ok", c.name, c.value, c.limit);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(Exit::Ok as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit() as u8)
        }
    }
}
