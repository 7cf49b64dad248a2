//! The four subcommands. Each returns its manifest or report; the caller
//! maps errors to exit codes.

use std::path::Path;
use std::time::Instant;

use log::info;
use rsbridge::bridge::{self, BridgeSolution};
use rsbridge::kernel1d::ReflectedHeatKernel;
use rsbridge::sde::{self, SimOptions};
use rsbridge::{BoxDomain, Grid, GridDensity};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self as art, Check, SimulateManifest, SnapshotEntry, SolveManifest, Table};
use crate::scenario::{EngineKind, Output, Problem, Scenario};
use crate::CliError;

/// Tolerance of the oracle comparison in `kernel-check`.
pub const ORACLE_TOL: f64 = 1e-10;
/// Mass tolerance of every reconstructed snapshot.
pub const MASS_TOL: f64 = 1e-6;
/// Relative tolerance of `ρ = φ·φ̂` in snapshot files.
pub const PRODUCT_TOL: f64 = 1e-12;

/// Endpoint `L¹` budgets `(t = 0, t = 1)` per engine.
pub fn endpoint_budget(engine: EngineKind) -> (f64, f64) {
    match engine {
        EngineKind::Kernel => (1e-6, 1e-4),
        EngineKind::Fpk => (1e-3, 1e-3),
    }
}

fn fail_on(checks: &[Check]) -> Result<(), CliError> {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} = {:e} (limit {:e})", c.name, c.value, c.limit))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failed.join("; ")))
    }
}

fn strictly_decreasing_violations(v: &[f64]) -> usize {
    v.windows(2).filter(|w| !(w[1] < w[0])).count()
}

/// Largest `|u·n|` over face nodes.
fn max_normal_control(grid: &Grid, control: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (axis, comp) in control.iter().enumerate() {
        for (k, u) in comp.iter().enumerate() {
            if grid.on_face(k, axis) {
                worst = worst.max(u.abs());
            }
        }
    }
    worst
}

fn solve_checks(p: &Problem, sol: &BridgeSolution) -> Result<Vec<Check>, CliError> {
    let (b0, b1) = endpoint_budget(p.scenario.engine);
    let first = sol.snapshots.first().expect("at least two snapshots");
    let last = sol.snapshots.last().expect("at least two snapshots");
    let mass_dev = sol.snapshots.iter().map(|s| (s.rho.trapezoid_mass() - 1.0).abs()).fold(0.0, f64::max);
    let normal = sol.snapshots.iter().map(|s| max_normal_control(&p.grid, &s.control)).fold(0.0, f64::max);
    let trace: Vec<f64> = sol.residual_trace.iter().map(|r| r.phi1).collect();
    Ok(vec![
        Check::at_most("residual_trace_non_decreasing_steps", strictly_decreasing_violations(&trace) as f64, 0.0),
        Check::at_most("snapshot_mass_deviation", mass_dev, MASS_TOL),
        Check::at_most("endpoint_l1_rho0", first.rho.l1_distance(&p.rho0)?, b0),
        Check::at_most("endpoint_l1_rho1", last.rho.l1_distance(&p.rho1)?, b1),
        Check::at_most("boundary_normal_control", normal, 0.0),
    ])
}

/// Solves the scenario and writes snapshots, residual trace, factors and the manifest.
pub fn run_solve(scenario: &Scenario, out: &Path) -> Result<SolveManifest, CliError> {
    let start = Instant::now();
    let p = scenario.build()?;
    let engine = p.engine()?;
    info!("solving `{}` with the {} engine on {} nodes", scenario.name, engine.name(), p.grid.len());
    let sol = bridge::solve(&p.rho0, &p.rho1, &p.config, engine)?;
    info!("converged in {} iterations", sol.iterations());

    let mut snapshots = Vec::new();
    for (k, s) in sol.snapshots.iter().enumerate() {
        let file = art::snapshot_file(k);
        if scenario.outputs.contains(&Output::Snapshots) {
            art::write_snapshot(&out.join(&file), &p.grid, s)?;
        }
        snapshots.push(SnapshotEntry { t: s.t, file, mass: s.rho.trapezoid_mass() });
    }
    if scenario.outputs.contains(&Output::ResidualTrace) {
        art::write_residuals(&out.join(art::RESIDUALS), &sol.residual_trace)?;
    }
    // factors are always written: closed-loop simulation reads them back
    art::write_factors(&out.join(art::FACTORS), &sol)?;

    let checks = solve_checks(&p, &sol)?;
    let last = sol.residual_trace.last().expect("at least one iteration");
    let manifest = SolveManifest {
        format_version: art::FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "solve".into(),
        scenario: scenario.clone(),
        config_hash: scenario.hash(),
        engine: sol.engine().name().into(),
        iterations: sol.iterations(),
        final_residual_phi1: last.phi1,
        final_residual_phihat0: last.phihat0,
        snapshots,
        checks,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    art::write_json(&out.join(art::MANIFEST), &manifest)?;
    fail_on(&manifest.checks)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    pub paths: usize,
    pub seed: u64,
    pub closed_loop: bool,
}

/// Seed of the initial-state draw, kept apart from the path streams.
fn initial_seed(seed: u64) -> u64 {
    !seed
}

/// Simulates the scenario's reflected SDE, open or closed loop.
pub fn run_simulate(scenario: &Scenario, out: &Path, args: &SimulateArgs) -> Result<SimulateManifest, CliError> {
    let start = Instant::now();
    let p = scenario.build()?;
    let engine = p.engine()?;
    let sim = &scenario.simulation;
    let control = if args.closed_loop {
        let manifest_path = out.join(art::MANIFEST);
        if !manifest_path.exists() {
            return Err(CliError::MissingSolution(format!("{} not found; run `solve` first", manifest_path.display())));
        }
        let solved: SolveManifest = art::read_json(&manifest_path)?;
        if solved.config_hash != scenario.hash() {
            return Err(CliError::MissingSolution(format!(
                "{} belongs to a different scenario (hash {})",
                manifest_path.display(),
                solved.config_hash
            )));
        }
        let phi1 = art::read_phi1(out, &p.grid)?;
        let n = sim.control_times.max(2);
        let times: Vec<f64> = (0..n).map(|k| if k + 1 == n { 1.0 } else { k as f64 / (n - 1) as f64 }).collect();
        Some(bridge::control_schedule(&engine, &phi1, &times, p.config.density_floor)?)
    } else {
        None
    };

    let initial = sde::inverse_cdf_sample(&p.rho0, args.paths, initial_seed(args.seed))?;
    let options = SimOptions::from_config(&p.config).with_record_every(sim.record_every);
    let domain = p.grid.domain().clone();
    let e = sde::simulate(&initial, &domain, &p.drift, control.as_ref(), &options, args.seed)?;
    let mut csv = Vec::new();
    e.write_csv(&mut csv)?;
    art::write_atomic(&out.join(art::ENSEMBLE), &csv)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        #[serde(flatten)]
        meta: sde::EnsembleMeta,
        initial_seed: u64,
        scenario: &'a Scenario,
        config_hash: String,
    }
    art::write_json(
        &out.join(art::ENSEMBLE_META),
        &Sidecar { meta: e.meta(), initial_seed: initial_seed(args.seed), scenario, config_hash: scenario.hash() },
    )?;

    let coarse = Grid::uniform(domain, sim.histogram_points)?;
    let empirical = sde::histogram(&e.terminal(), &coarse)?;
    let target = sde::cell_average(&p.rho1, &coarse)?;
    let image = GridDensity::new(p.grid.clone(), engine.forward(p.rho0.values())?)?.normalize()?;
    let uncontrolled = sde::cell_average(&image, &coarse)?;
    let mut header = art::coord_names(coarse.dim());
    header.extend(["empirical".into(), "target_rho1".into(), "uncontrolled".into()]);
    let mut t = Table::new(&header);
    for (k, x) in coarse.nodes().iter().enumerate() {
        let mut row = x.clone();
        row.extend([empirical.values()[k], target.values()[k], uncontrolled.values()[k]]);
        t.row(&row);
    }
    t.save(&out.join(art::TERMINAL))?;

    let ks = if p.grid.dim() == 1 && args.paths > 0 {
        let terminal: Vec<f64> = e.terminal().into_iter().map(|x| x[0]).collect();
        Some(sde::ks_statistic(&terminal, &p.rho1)?)
    } else {
        None
    };
    let checks = vec![Check::at_most("containment_violations", e.containment_violations() as f64, 0.0)];
    let manifest = SimulateManifest {
        format_version: art::FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "simulate".into(),
        scenario: scenario.clone(),
        config_hash: scenario.hash(),
        closed_loop: args.closed_loop,
        paths: args.paths,
        seed: args.seed,
        ks_terminal_vs_rho1: ks,
        l1_terminal_vs_rho1: empirical.l1_distance(&target)?,
        l1_terminal_vs_uncontrolled: empirical.l1_distance(&uncontrolled)?,
        containment_violations: e.containment_violations(),
        reflection_steps: e.total_reflection_steps(),
        checks,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    art::write_json(&out.join(art::SIM_MANIFEST), &manifest)?;
    fail_on(&manifest.checks)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCheckArgs {
    pub lower: f64,
    pub upper: f64,
    pub theta: f64,
    pub t: f64,
    /// Cosine-series terms under test.
    pub terms: usize,
    /// Image pairs in the oracle sum.
    pub images: usize,
}

impl Default for KernelCheckArgs {
    fn default() -> Self {
        Self { lower: -1.0, upper: 1.0, theta: 0.5, t: 1.0, terms: 100, images: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub args: KernelCheckArgs,
    pub lattice_points: usize,
    /// Terms the tail majorant asks for at `ORACLE_TOL`; `None` when the
    /// series is hopeless and the image sum must be used.
    pub required_terms: Option<usize>,
    pub cosine_sufficient: bool,
    /// `max |cosine(terms) − images|` over the lattice.
    pub max_discrepancy: f64,
    /// Same, for the automatically routed evaluation.
    pub routed_discrepancy: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// Free-space lower bound on the kernel over the lattice.
    pub positivity_bound: f64,
    /// False when that bound underflows, so positivity is not testable in f64.
    pub positivity_checked: bool,
    pub row_sum_deviation: f64,
    pub chapman_kolmogorov_deviation: f64,
    pub oracle_passed: bool,
    pub positivity_passed: bool,
}

impl KernelReport {
    pub fn passed(&self) -> bool {
        self.oracle_passed && self.positivity_passed
    }
}

/// Cosine series against the image sum on a 101-node lattice.
pub fn kernel_check(args: &KernelCheckArgs) -> Result<KernelReport, CliError> {
    const LATTICE: usize = 101;
    let dom = BoxDomain::interval(args.lower, args.upper)?;
    let k = ReflectedHeatKernel::new(&dom, args.theta, args.terms)?;
    let grid = Grid::uniform(dom, LATTICE)?;
    let x = grid.axis_nodes(0);
    let (mut disc, mut routed, mut lo, mut hi) = (0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &xi in &x {
        for &yj in &x {
            let img = k.eval_images(xi, yj, args.t, args.images)?;
            let cos = k.eval_cosine(xi, yj, args.t)?;
            let auto = k.eval(xi, yj, args.t)?;
            disc = disc.max((cos - img).abs());
            routed = routed.max((auto - img).abs());
            lo = lo.min(auto);
            hi = hi.max(auto);
        }
    }
    let required = k.required_terms(args.t, ORACLE_TOL).ok();
    let cosine_sufficient = required.is_some_and(|m| args.terms >= m);
    let r = args.upper - args.lower;
    let bound = (-r * r / (4.0 * args.theta * args.t)).exp() / (4.0 * std::f64::consts::PI * args.theta * args.t).sqrt();
    let positivity_checked = bound > 0.0;

    let a = k.kernel_matrix(&grid, args.t)?;
    let row_sum_deviation = a.rows().into_iter().map(|row| (row.sum() - 1.0).abs()).fold(0.0, f64::max);
    let half = k.kernel_matrix(&grid, 0.5 * args.t)?;
    let ck = half.dot(&half);
    let chapman_kolmogorov_deviation = (&ck - &a).iter().map(|v| v.abs()).fold(0.0, f64::max);

    let oracle_passed = if cosine_sufficient { disc <= ORACLE_TOL } else { routed <= ORACLE_TOL };
    Ok(KernelReport {
        args: args.clone(),
        lattice_points: LATTICE,
        required_terms: required,
        cosine_sufficient,
        max_discrepancy: disc,
        routed_discrepancy: routed,
        min_value: lo,
        max_value: hi,
        positivity_bound: bound,
        positivity_checked,
        row_sum_deviation,
        chapman_kolmogorov_deviation,
        oracle_passed,
        positivity_passed: !positivity_checked || lo > 0.0,
    })
}

/// Re-checks the invariants of the artifacts in `dir` from the files alone.
pub fn validate(dir: &Path) -> Result<Vec<Check>, CliError> {
    let manifest_path = dir.join(art::MANIFEST);
    if !manifest_path.exists() {
        return Err(CliError::MissingSolution(format!("{} not found", manifest_path.display())));
    }
    let m: SolveManifest = art::read_json(&manifest_path)?;
    let grid = Grid::new(m.scenario.domain.clone(), m.scenario.points.clone())?;
    let dim = grid.dim();
    let w = grid.weights();
    let mut checks = Vec::new();

    if m.scenario.outputs.contains(&Output::Snapshots) {
        let (mut mass_dev, mut product, mut normal) = (0.0f64, 0.0f64, 0.0f64);
        for s in &m.snapshots {
            let (header, rows) = art::read_table(&dir.join(&s.file))?;
            let col = |name: &str| {
                header.iter().position(|h| h == name).ok_or_else(|| CliError::Invariant(format!("{}: no `{name}` column", s.file)))
            };
            let (rho, phi, phihat) = (col("rho")?, col("phi")?, col("phihat")?);
            let us: Vec<usize> = (1..=dim).map(|a| col(&format!("u{a}"))).collect::<Result<_, _>>()?;
            if rows.len() != grid.len() {
                return Err(CliError::Invariant(format!("{}: {} rows for {} nodes", s.file, rows.len(), grid.len())));
            }
            let mut mass = 0.0;
            for (k, r) in rows.iter().enumerate() {
                mass += w[k] * r[rho];
                let prod = r[phi] * r[phihat];
                product = product.max((r[rho] - prod).abs() / prod.abs().max(f64::MIN_POSITIVE));
                for (axis, &c) in us.iter().enumerate() {
                    if grid.on_face(k, axis) {
                        normal = normal.max(r[c].abs());
                    }
                }
            }
            mass_dev = mass_dev.max((mass - 1.0).abs());
        }
        checks.push(Check::at_most("snapshot_mass_deviation", mass_dev, MASS_TOL));
        checks.push(Check::at_most("snapshot_product_relative_error", product, PRODUCT_TOL));
        checks.push(Check::at_most("boundary_normal_control", normal, 0.0));
    }
    if m.scenario.outputs.contains(&Output::ResidualTrace) {
        let (_, rows) = art::read_table(&dir.join(art::RESIDUALS))?;
        let phi1: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        checks.push(Check::at_most("residual_trace_non_decreasing_steps", strictly_decreasing_violations(&phi1) as f64, 0.0));
        let last = rows.last().map(|r| r[1].max(r[2])).unwrap_or(f64::INFINITY);
        checks.push(Check::at_most("final_residual", last, m.scenario.solver.fp_tol));
    }
    let ensemble = dir.join(art::ENSEMBLE);
    if ensemble.exists() {
        let (header, rows) = art::read_table(&ensemble)?;
        let dom = grid.domain();
        let xs: Vec<usize> = (1..=dim).filter_map(|a| header.iter().position(|h| *h == format!("x{a}"))).collect();
        let lt: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with("dL") || h.starts_with("dU")).map(|(i, _)| i).collect();
        let outside = rows.iter().filter(|r| !dom.contains(&xs.iter().map(|&c| r[c]).collect::<Vec<_>>())).count();
        let negative = rows.iter().filter(|r| lt.iter().any(|&c| r[c] < 0.0)).count();
        checks.push(Check::at_most("ensemble_states_outside_box", outside as f64, 0.0));
        checks.push(Check::at_most("ensemble_negative_local_time_increments", negative as f64, 0.0));
    }
    fail_on(&checks)?;
    Ok(checks)
}
