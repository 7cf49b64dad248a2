//! Reflected Euler–Maruyama ensembles for
//! `dx = (f + u) dt + √(2θ) dw + n dγ` on a box, with per-face local times.
//!
//! Reflection is the per-step projection realization of the Skorokhod map,
//! applied coordinatewise. Every path draws from its own ChaCha stream
//! (`seed`, path index), so ensembles are bit-identical across runs and
//! thread counts.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::ControlField;
use crate::config::{SolverConfig, HORIZON};
use crate::density::GridDensity;
use crate::domain::{BoxDomain, Grid};
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fpk::Cdf;

/// Version of the ensemble CSV layout and its JSON sidecar.
pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

/// One projection step on `[a, b]`: returns the new state and the lower and
/// upper local-time increments.
pub fn skorokhod_step_1d(x_prev: f64, increment: f64, interval: &BoxDomain) -> (f64, f64, f64) {
    let (a, b) = (interval.lower()[0], interval.upper()[0]);
    project(x_prev + increment, a, b)
}

fn project(c: f64, a: f64, b: f64) -> (f64, f64, f64) {
    if c < a {
        (a, a - c, 0.0)
    } else if c > b {
        (b, 0.0, c - b)
    } else {
        (c, 0.0, 0.0)
    }
}

/// A path pushed through the discrete two-sided Skorokhod map.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath {
    pub x: Vec<f64>,
    /// Cumulative lower and upper local times, starting at zero.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Reflects the free path `free` (with `free[0]` inside `[a, b]`) by
/// applying the projection to each of its increments in turn.
pub fn skorokhod_map(free: &[f64], interval: &BoxDomain) -> Result<ReflectedPath> {
    let (a, b) = (interval.lower()[0], interval.upper()[0]);
    let Some(&start) = free.first() else {
        return Ok(ReflectedPath { x: vec![], lower: vec![], upper: vec![] });
    };
    if !(a..=b).contains(&start) {
        return Err(Error::OutOfDomain { point: start, lower: a, upper: b });
    }
    let mut out = ReflectedPath { x: vec![start], lower: vec![0.0], upper: vec![0.0] };
    for w in free.windows(2) {
        let k = out.x.len() - 1;
        let (x, dl, du) = project(out.x[k] + (w[1] - w[0]), a, b);
        out.x.push(x);
        out.lower.push(out.lower[k] + dl);
        out.upper.push(out.upper[k] + du);
    }
    Ok(out)
}

/// Whether increments are folded back into the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reflection {
    #[default]
    Skorokhod,
    /// No reflection at all, for side-by-side comparison with the reflected path.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Temperature; zero gives deterministic paths.
    pub theta: f64,
    pub time_steps: usize,
    /// Keep every `record_every`-th state; the final state is always kept.
    pub record_every: usize,
    pub reflection: Reflection,
}

impl SimOptions {
    pub fn from_config(config: &SolverConfig) -> Self {
        Self { theta: config.theta, time_steps: config.time_steps, record_every: 1, reflection: Reflection::Skorokhod }
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn dt(&self) -> f64 {
        HORIZON / self.time_steps as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidConfig(format!("theta must be nonnegative, got {}", self.theta)));
        }
        if self.time_steps == 0 || self.record_every == 0 {
            return Err(Error::InvalidConfig("time_steps and record_every must be positive".into()));
        }
        Ok(())
    }

    /// Steps at which states are stored.
    fn recorded_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (0..=self.time_steps).step_by(self.record_every).collect();
        if *steps.last().unwrap() != self.time_steps {
            steps.push(self.time_steps);
        }
        steps
    }
}

/// Sample paths with their local-time records.
///
/// States are stored flat as `[path][record][axis]`; local times as
/// `[path][record][axis][lower, upper]`, cumulative from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    domain: BoxDomain,
    options: SimOptions,
    seed: u64,
    closed_loop: bool,
    steps: Vec<usize>,
    states: Vec<f64>,
    local: Vec<f64>,
    reflections: Vec<usize>,
    violations: usize,
}

struct PathRecord {
    states: Vec<f64>,
    local: Vec<f64>,
    reflections: usize,
    violations: usize,
}

/// Sidecar metadata for an exported ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub format_version: u32,
    pub n_paths: usize,
    pub dim: usize,
    pub dt: f64,
    pub seed: u64,
    pub closed_loop: bool,
    pub domain: BoxDomain,
    pub options: SimOptions,
    pub reflection_steps: usize,
    pub containment_violations: usize,
}

/// Integrates one path per entry of `initial`.
pub fn simulate(
    initial: &[Vec<f64>],
    domain: &BoxDomain,
    drift: &DriftSpec,
    control: Option<&ControlField>,
    options: &SimOptions,
    seed: u64,
) -> Result<PathEnsemble> {
    options.validate()?;
    let dim = domain.dim();
    if let Some(x) = initial.iter().find(|x| !domain.contains(x)) {
        return Err(Error::InvalidConfig(format!("initial state {x:?} lies outside the domain")));
    }
    if let Some(c) = control {
        if c.grid().domain() != domain {
            return Err(Error::DomainMismatch);
        }
    }
    let steps = options.recorded_steps();
    let records: Vec<PathRecord> = initial
        .par_iter()
        .enumerate()
        .map(|(id, x0)| run_path(id as u64, x0, domain, drift, control, options, seed, &steps))
        .collect::<Result<_>>()?;
    let mut e = PathEnsemble {
        domain: domain.clone(),
        options: options.clone(),
        seed,
        closed_loop: control.is_some(),
        states: Vec::with_capacity(initial.len() * steps.len() * dim),
        local: Vec::with_capacity(initial.len() * steps.len() * dim * 2),
        steps,
        reflections: Vec::with_capacity(initial.len()),
        violations: 0,
    };
    for r in records {
        e.states.extend(r.states);
        e.local.extend(r.local);
        e.reflections.push(r.reflections);
        e.violations += r.violations;
    }
    Ok(e)
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    id: u64,
    x0: &[f64],
    domain: &BoxDomain,
    drift: &DriftSpec,
    control: Option<&ControlField>,
    options: &SimOptions,
    seed: u64,
    steps: &[usize],
) -> Result<PathRecord> {
    let dim = domain.dim();
    let dt = options.dt();
    let sigma = (2.0 * options.theta * dt).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    let mut x = x0.to_vec();
    let mut lt = vec![0.0; 2 * dim];
    let (mut f, mut u) = (vec![0.0; dim], vec![0.0; dim]);
    let mut rec = PathRecord {
        states: Vec::with_capacity(steps.len() * dim),
        local: Vec::with_capacity(steps.len() * dim * 2),
        reflections: 0,
        violations: 0,
    };
    rec.states.extend_from_slice(&x);
    rec.local.extend_from_slice(&lt);
    let mut next = 1;
    for k in 1..=options.time_steps {
        let t = (k - 1) as f64 * dt;
        drift.drift(&x, &mut f);
        if let Some(c) = control {
            c.eval(t, &x, &mut u)?;
        }
        let mut reflected = false;
        for axis in 0..dim {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let c = x[axis] + (f[axis] + u[axis]) * dt + sigma * xi;
            x[axis] = match options.reflection {
                Reflection::Skorokhod => {
                    let (y, dl, du) = project(c, domain.lower()[axis], domain.upper()[axis]);
                    lt[2 * axis] += dl;
                    lt[2 * axis + 1] += du;
                    reflected |= dl > 0.0 || du > 0.0;
                    y
                }
                Reflection::Free => c,
            };
        }
        rec.reflections += reflected as usize;
        if !domain.contains(&x) {
            rec.violations += 1;
        }
        if next < steps.len() && steps[next] == k {
            rec.states.extend_from_slice(&x);
            rec.local.extend_from_slice(&lt);
            next += 1;
        }
    }
    Ok(rec)
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.reflections.len()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn options(&self) -> &SimOptions {
        &self.options
    }

    pub fn dt(&self) -> f64 {
        self.options.dt()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Integration steps at which states were recorded.
    pub fn recorded_steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn recorded_times(&self) -> Vec<f64> {
        self.steps.iter().map(|&k| k as f64 * self.dt()).collect()
    }

    /// State of `path` at record `r`.
    pub fn state(&self, path: usize, r: usize) -> &[f64] {
        let d = self.dim();
        let at = (path * self.steps.len() + r) * d;
        &self.states[at..at + d]
    }

    /// Cumulative `(lower, upper)` local time of `path` on the faces normal to `axis`.
    pub fn local_time(&self, path: usize, r: usize, axis: usize) -> (f64, f64) {
        let at = ((path * self.steps.len() + r) * self.dim() + axis) * 2;
        (self.local[at], self.local[at + 1])
    }

    /// Steps of `path` at which any coordinate was reflected.
    pub fn reflection_steps(&self, path: usize) -> usize {
        self.reflections[path]
    }

    pub fn total_reflection_steps(&self) -> usize {
        self.reflections.iter().sum()
    }

    /// States found outside the closed box over every integration step.
    pub fn containment_violations(&self) -> usize {
        self.violations
    }

    /// Record nearest to time `t`.
    pub fn record_at(&self, t: f64) -> usize {
        let k = t / self.dt();
        let (mut best, mut gap) = (0, f64::INFINITY);
        for (r, &s) in self.steps.iter().enumerate() {
            let g = (s as f64 - k).abs();
            if g < gap {
                (best, gap) = (r, g);
            }
        }
        best
    }

    /// All states at record `r`.
    pub fn states_at(&self, r: usize) -> Vec<Vec<f64>> {
        (0..self.n_paths()).map(|p| self.state(p, r).to_vec()).collect()
    }

    pub fn terminal(&self) -> Vec<Vec<f64>> {
        self.states_at(self.steps.len() - 1)
    }

    pub fn meta(&self) -> EnsembleMeta {
        EnsembleMeta {
            format_version: ENSEMBLE_FORMAT_VERSION,
            n_paths: self.n_paths(),
            dim: self.dim(),
            dt: self.dt(),
            seed: self.seed,
            closed_loop: self.closed_loop,
            domain: self.domain.clone(),
            options: self.options.clone(),
            reflection_steps: self.total_reflection_steps(),
            containment_violations: self.violations,
        }
    }

    /// One row per path and record: `path_id, step, t, x1[, x2], dL, dU` in
    /// 1D and `…, dL1, dU1, dL2, dU2` in 2D, increments since the previous
    /// record of the same path.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidConfig(format!("writing ensemble: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let dim = self.dim();
        let mut header = vec!["path_id".to_string(), "step".into(), "t".into()];
        header.extend((1..=dim).map(|a| format!("x{a}")));
        if dim == 1 {
            header.extend(["dL".to_string(), "dU".into()]);
        } else {
            for a in 1..=dim {
                header.extend([format!("dL{a}"), format!("dU{a}")]);
            }
        }
        w.write_record(&header).map_err(io)?;
        let mut row = Vec::with_capacity(header.len());
        for p in 0..self.n_paths() {
            for (r, &step) in self.steps.iter().enumerate() {
                row.clear();
                row.push(p.to_string());
                row.push(step.to_string());
                row.push((step as f64 * self.dt()).to_string());
                row.extend(self.state(p, r).iter().map(|v| v.to_string()));
                for axis in 0..dim {
                    let (l, u) = self.local_time(p, r, axis);
                    let (l0, u0) = if r == 0 { (0.0, 0.0) } else { self.local_time(p, r - 1, axis) };
                    row.push((l - l0).to_string());
                    row.push((u - u0).to_string());
                }
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::InvalidConfig(format!("writing ensemble: {e}")))?;
        Ok(())
    }
}

/// Nearest-node index of `x` along `axis`.
fn nearest(grid: &Grid, axis: usize, x: f64) -> usize {
    let r = (x - grid.domain().lower()[axis]) / grid.spacing(axis);
    (r.round().max(0.0) as usize).min(grid.points()[axis] - 1)
}

/// Histogram of points on the dual cells of `grid`: each point counts
/// towards its nearest node, and values are `count/(n·wᵢ)` so the trapezoid
/// mass is one. An empty sample gives the zero field.
pub fn histogram(points: &[Vec<f64>], grid: &Grid) -> Result<GridDensity> {
    let w = grid.weights();
    let mut counts = vec![0usize; grid.len()];
    for x in points {
        if x.len() != grid.dim() {
            return Err(Error::DomainMismatch);
        }
        let idx = match grid.dim() {
            1 => nearest(grid, 0, x[0]),
            _ => nearest(grid, 0, x[0]) * grid.points()[1] + nearest(grid, 1, x[1]),
        };
        counts[idx] += 1;
    }
    let n = points.len() as f64;
    let values = counts.iter().zip(&w).map(|(&c, w)| if c == 0 { 0.0 } else { c as f64 / (n * w) }).collect();
    Ok(GridDensity::new(grid.clone(), values)?.with_flag(!points.is_empty()))
}

/// Histogram of the ensemble at the record nearest to `t`.
pub fn empirical_marginal(e: &PathEnsemble, t: f64, grid: &Grid) -> Result<GridDensity> {
    if !(0.0..=HORIZON).contains(&t) {
        return Err(Error::InvalidConfig(format!("time {t} outside [0, 1]")));
    }
    if grid.domain() != e.domain() {
        return Err(Error::DomainMismatch);
    }
    histogram(&e.states_at(e.record_at(t)), grid)
}

/// Mass of a fine density over the dual cells of a coarser grid on the same
/// box, divided by the coarse weights: the counterpart of [`histogram`] for
/// the target. Exact for the piecewise-linear interpolant in 1D; in 2D each
/// fine node's trapezoid mass goes to its nearest coarse node, split evenly
/// along an axis when it sits on a cell edge.
pub fn cell_average(d: &GridDensity, coarse: &Grid) -> Result<GridDensity> {
    if d.grid().domain() != coarse.domain() {
        return Err(Error::DomainMismatch);
    }
    let w = coarse.weights();
    let values: Vec<f64> = match coarse.dim() {
        1 => {
            let cdf = Cdf::new(d.grid(), d.values())?;
            let h = 0.5 * coarse.spacing(0);
            coarse.axis_nodes(0).iter().zip(&w).map(|(x, w)| (cdf.eval(x + h) - cdf.eval(x - h)) / w).collect()
        }
        _ => {
            let fine = d.grid();
            let total = d.trapezoid_mass();
            if !(total > 0.0) {
                return Err(Error::ZeroMass(total));
            }
            let shares: Vec<Vec<Vec<(usize, f64)>>> = (0..2)
                .map(|axis| {
                    let h = coarse.spacing(axis);
                    let a = coarse.domain().lower()[axis];
                    fine.axis_nodes(axis)
                        .iter()
                        .map(|&x| {
                            let r = (x - a) / h;
                            let lo = r.floor();
                            if ((r - lo) - 0.5).abs() < 1e-9 {
                                vec![(lo as usize, 0.5), (lo as usize + 1, 0.5)]
                            } else {
                                vec![(nearest(coarse, axis, x), 1.0)]
                            }
                        })
                        .collect()
                })
                .collect();
            let (fw, n1, c1) = (fine.weights(), fine.points()[1], coarse.points()[1]);
            let mut mass = vec![0.0; coarse.len()];
            for (k, (v, fw)) in d.values().iter().zip(&fw).enumerate() {
                let m = v * fw / total;
                for &(i, si) in &shares[0][k / n1] {
                    for &(j, sj) in &shares[1][k % n1] {
                        mass[i * c1 + j] += m * si * sj;
                    }
                }
            }
            mass.iter().zip(&w).map(|(m, w)| m / w).collect()
        }
    };
    Ok(GridDensity::new(coarse.clone(), values)?.with_flag(true))
}

/// `n` independent draws from the piecewise-linear interpolant of `d`; in 2D
/// the first coordinate comes from the marginal, the second from the
/// conditional given the first.
pub fn inverse_cdf_sample(d: &GridDensity, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let grid = d.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0);
    match grid.dim() {
        1 => {
            let cdf = Cdf::new(grid, d.values())?;
            Ok((0..n).map(|_| vec![cdf.quantile(unit.sample(&mut rng))]).collect())
        }
        _ => {
            let (n0, n1) = (grid.points()[0], grid.points()[1]);
            let g0 = grid.axis_grid(0);
            let g1 = grid.axis_grid(1);
            let w1 = g1.axis_weights(0);
            let rows: Vec<&[f64]> = d.values().chunks(n1).collect();
            let marginal: Vec<f64> = rows.iter().map(|r| r.iter().zip(&w1).map(|(v, w)| v * w).sum()).collect();
            let cdf0 = Cdf::new(&g0, &marginal)?;
            let x0 = g0.axis_nodes(0);
            let h0 = g0.spacing(0);
            let mut out = Vec::with_capacity(n);
            let mut blend = vec![0.0; n1];
            for _ in 0..n {
                let x = cdf0.quantile(unit.sample(&mut rng));
                let i = (((x - x0[0]) / h0).floor().max(0.0) as usize).min(n0 - 2);
                let f = ((x - x0[i]) / h0).clamp(0.0, 1.0);
                for (b, (lo, hi)) in blend.iter_mut().zip(rows[i].iter().zip(rows[i + 1])) {
                    *b = (1.0 - f) * lo + f * hi;
                }
                // a zero-mass row blend only happens where the marginal is zero too
                let y = match Cdf::new(&g1, &blend) {
                    Ok(c) => c.quantile(unit.sample(&mut rng)),
                    Err(_) => {
                        let near = if f < 0.5 { rows[i] } else { rows[i + 1] };
                        Cdf::new(&g1, near)?.quantile(unit.sample(&mut rng))
                    }
                };
                out.push(vec![x, y]);
            }
            Ok(out)
        }
    }
}

/// Kolmogorov–Smirnov distance between a 1D sample and the CDF of `d`.
pub fn ks_statistic(samples: &[f64], d: &GridDensity) -> Result<f64> {
    if d.grid().dim() != 1 {
        return Err(Error::InvalidConfig("the KS statistic is one-dimensional".into()));
    }
    if samples.is_empty() {
        return Ok(0.0);
    }
    let cdf = Cdf::new(d.grid(), d.values())?;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut worst = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf.eval(x);
        worst = worst.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn interval(a: f64, b: f64) -> BoxDomain {
        BoxDomain::interval(a, b).unwrap()
    }

    fn opts(theta: f64, steps: usize) -> SimOptions {
        SimOptions { theta, time_steps: steps, record_every: 1, reflection: Reflection::Skorokhod }
    }

    #[test]
    fn step_inside_is_identity() {
        assert_eq!(skorokhod_step_1d(0.1, 0.2, &interval(-1.0, 1.0)), (0.1 + 0.2, 0.0, 0.0));
    }

    #[test]
    fn step_projects_onto_faces() {
        let (x, dl, du) = skorokhod_step_1d(0.9, 0.3, &interval(-1.0, 1.0));
        assert_eq!((x, dl), (1.0, 0.0));
        assert_abs_diff_eq!(du, 0.2, epsilon = 1e-15);
        let (x, dl, du) = skorokhod_step_1d(-0.95, -0.25, &interval(-1.0, 1.0));
        assert_eq!((x, du), (-1.0, 0.0));
        assert_abs_diff_eq!(dl, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn map_matches_free_path_until_first_exit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut free = vec![0.0];
        for _ in 0..5000 {
            let xi: f64 = StandardNormal.sample(&mut rng);
            free.push(free.last().unwrap() + 0.03 * xi);
        }
        let dom = interval(-1.0, 1.0);
        let r = skorokhod_map(&free, &dom).unwrap();
        let exit = free.iter().position(|x| x.abs() > 1.0).expect("path should leave the interval");
        assert!(r.x[..exit] == free[..exit]);
        assert!(r.x[exit] != free[exit]);
        assert!(r.x.iter().all(|x| x.abs() <= 1.0));
        assert!(r.lower.windows(2).all(|w| w[1] >= w[0]) && r.upper.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn free_and_reflected_ensembles_agree_before_the_boundary() {
        let dom = interval(-1.0, 1.0);
        let init = vec![vec![0.0]; 20];
        let refl = simulate(&init, &dom, &DriftSpec::Zero, None, &opts(0.5, 1000), 11).unwrap();
        let free_opts = SimOptions { reflection: Reflection::Free, ..opts(0.5, 1000) };
        let free = simulate(&init, &dom, &DriftSpec::Zero, None, &free_opts, 11).unwrap();
        for p in 0..20 {
            for r in 0..refl.recorded_steps().len() {
                let x = free.state(p, r)[0];
                if x.abs() > 1.0 {
                    assert_ne!(refl.state(p, r)[0], x);
                    break;
                }
                assert_eq!(refl.state(p, r)[0], x);
            }
        }
        assert!(free.containment_violations() > 0);
        assert_eq!(refl.containment_violations(), 0);
    }

    #[test]
    fn zero_temperature_without_drift_is_still() {
        let dom = BoxDomain::square(-1.0, 1.0).unwrap();
        let init = vec![vec![0.3, -0.2], vec![1.0, 1.0], vec![-1.0, 0.5]];
        let e = simulate(&init, &dom, &DriftSpec::Zero, None, &opts(0.0, 100), 1).unwrap();
        for (p, x0) in init.iter().enumerate() {
            for r in 0..e.recorded_steps().len() {
                assert_eq!(e.state(p, r), &x0[..]);
            }
        }
        assert_eq!(e.total_reflection_steps(), 0);
    }

    #[test]
    fn reflected_brownian_motion_stays_inside_and_reflects() {
        let dom = interval(-1.0, 1.0);
        let init = vec![vec![0.0]; 200];
        let e = simulate(&init, &dom, &DriftSpec::Zero, None, &opts(0.5, 1000), 7).unwrap();
        assert_eq!(e.containment_violations(), 0);
        assert!(e.total_reflection_steps() > 0);
        for p in 0..e.n_paths() {
            assert_eq!(e.local_time(p, 0, 0), (0.0, 0.0));
            for r in 1..e.recorded_steps().len() {
                let x = e.state(p, r)[0];
                assert!((-1.0..=1.0).contains(&x));
                let (l0, u0) = e.local_time(p, r - 1, 0);
                let (l1, u1) = e.local_time(p, r, 0);
                assert!(l1 >= l0 && u1 >= u0);
                // local time only grows at steps that end on the face
                assert_eq!(l1 > l0, x == -1.0);
                assert_eq!(u1 > u0, x == 1.0);
            }
        }
    }

    #[test]
    fn ensembles_are_seed_deterministic() {
        let dom = BoxDomain::square(-1.0, 1.0).unwrap();
        let init = vec![vec![0.1, 0.2]; 50];
        let o = opts(0.5, 200).with_record_every(7);
        let a = simulate(&init, &dom, &DriftSpec::Zero, None, &o, 99).unwrap();
        let b = simulate(&init, &dom, &DriftSpec::Zero, None, &o, 99).unwrap();
        let c = simulate(&init, &dom, &DriftSpec::Zero, None, &o, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.terminal(), c.terminal());
        assert_eq!(*a.recorded_steps().last().unwrap(), 200);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn csv_increments_sum_to_local_time() {
        let dom = interval(0.0, 0.5);
        let init = vec![vec![0.25]; 3];
        let e = simulate(&init, &dom, &DriftSpec::Zero, None, &opts(0.5, 400).with_record_every(10), 5).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let mut rd = csv::Reader::from_reader(&buf[..]);
        assert_eq!(rd.headers().unwrap(), vec!["path_id", "step", "t", "x1", "dL", "dU"]);
        let mut sums = vec![(0.0, 0.0); 3];
        let mut rows = 0;
        for rec in rd.records() {
            let rec = rec.unwrap();
            let p: usize = rec[0].parse().unwrap();
            sums[p].0 += rec[4].parse::<f64>().unwrap();
            sums[p].1 += rec[5].parse::<f64>().unwrap();
            rows += 1;
        }
        assert_eq!(rows, 3 * 41);
        let last = e.recorded_steps().len() - 1;
        for (p, (l, u)) in sums.into_iter().enumerate() {
            let (l1, u1) = e.local_time(p, last, 0);
            assert_abs_diff_eq!(l, l1, epsilon = 1e-12);
            assert_abs_diff_eq!(u, u1, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_path_histogram_is_a_unit_point_mass() {
        let dom = interval(-1.0, 1.0);
        let g = Grid::uniform(dom.clone(), 21).unwrap();
        let e = simulate(&[vec![0.33]], &dom, &DriftSpec::Zero, None, &opts(0.5, 100), 4).unwrap();
        let h = empirical_marginal(&e, 0.37, &g).unwrap();
        assert_eq!(h.values().iter().filter(|v| **v > 0.0).count(), 1);
        assert_abs_diff_eq!(h.trapezoid_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn still_uniform_samples_give_a_flat_histogram() {
        let dom = interval(0.0, 1.0);
        let g = Grid::uniform(dom.clone(), 11).unwrap();
        let u = GridDensity::constant(g.clone(), 1.0).unwrap();
        let init = inverse_cdf_sample(&u, 20_000, 8).unwrap();
        let e = simulate(&init, &dom, &DriftSpec::Zero, None, &opts(0.0, 10), 0).unwrap();
        let h = empirical_marginal(&e, 1.0, &g).unwrap();
        let l1 = h.l1_distance(&u).unwrap();
        // eleven dual cells of 2·10⁴ points: L¹ sampling error ≈ 0.02
        assert!(l1 < 0.05, "{l1}");
    }

    #[test]
    fn uniform_sample_passes_ks() {
        let g = Grid::uniform(interval(-2.0, 3.0), 6).unwrap();
        let d = GridDensity::constant(g, 0.2).unwrap();
        for (n, seed) in [(1000, 1), (4000, 2), (10_000, 3)] {
            let s: Vec<f64> = inverse_cdf_sample(&d, n, seed).unwrap().into_iter().map(|x| x[0]).collect();
            let ks = ks_statistic(&s, &d).unwrap();
            assert!(ks <= 1.36 / (n as f64).sqrt(), "n = {n}: {ks}");
        }
        assert!(inverse_cdf_sample(&d, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn narrow_density_samples_stay_in_its_cell() {
        let g = Grid::uniform(interval(0.0, 1.0), 11).unwrap();
        let mut v = vec![0.0; 11];
        v[4] = 1.0;
        let d = GridDensity::new(g, v).unwrap();
        for x in inverse_cdf_sample(&d, 500, 5).unwrap() {
            assert!((0.3..=0.5).contains(&x[0]), "{x:?}");
        }
    }

    #[test]
    fn conditional_sampling_in_2d_matches_product_marginals() {
        let dom = BoxDomain::square(0.0, 1.0).unwrap();
        let g = Grid::uniform(dom, 21).unwrap();
        // density x·(2 − y) up to scale: marginals ∝ x and ∝ (2 − y)
        let d = GridDensity::from_fn(g.clone(), |x| x[0] * (2.0 - x[1])).unwrap();
        let s = inverse_cdf_sample(&d, 20_000, 17).unwrap();
        let line = Grid::uniform(BoxDomain::interval(0.0, 1.0).unwrap(), 21).unwrap();
        let mx = GridDensity::from_fn(line.clone(), |x| x[0]).unwrap();
        let my = GridDensity::from_fn(line, |x| 2.0 - x[0]).unwrap();
        let xs: Vec<f64> = s.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = s.iter().map(|p| p[1]).collect();
        let bound = 1.63 / (20_000f64).sqrt();
        assert!(ks_statistic(&xs, &mx).unwrap() < bound);
        assert!(ks_statistic(&ys, &my).unwrap() < bound);
    }

    #[test]
    fn cell_average_of_linear_density_matches_nodal_values() {
        let dom = interval(0.0, 2.0);
        let fine = GridDensity::from_fn(Grid::uniform(dom.clone(), 401).unwrap(), |x| 1.0 + x[0]).unwrap();
        let coarse = Grid::uniform(dom, 5).unwrap();
        let c = cell_average(&fine, &coarse).unwrap();
        // interior dual cells are symmetric about their nodes; total mass is one
        let x = coarse.axis_nodes(0);
        for i in 1..4 {
            assert_abs_diff_eq!(c.values()[i], (1.0 + x[i]) / 4.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(c.trapezoid_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cell_average_in_2d_is_a_histogram_of_the_fine_mass() {
        let dom = BoxDomain::square(0.0, 1.0).unwrap();
        let fine = GridDensity::from_fn(Grid::uniform(dom.clone(), 41).unwrap(), |x| 1.0 + x[0] * x[1]).unwrap();
        let coarse = Grid::uniform(dom, 5).unwrap();
        let c = cell_average(&fine, &coarse).unwrap();
        assert_abs_diff_eq!(c.trapezoid_mass(), 1.0, epsilon = 1e-12);
        // symmetric under x ↔ y, and heavier towards (1, 1)
        let v = c.values();
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(v[i * 5 + j], v[j * 5 + i], epsilon = 1e-14);
            }
        }
        assert!(v[3 * 5 + 3] > v[5 + 1]);
        let u = GridDensity::constant(Grid::uniform(BoxDomain::square(0.0, 1.0).unwrap(), 41).unwrap(), 1.0).unwrap();
        let cu = cell_average(&u, &coarse).unwrap();
        assert!(cu.values().iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_input() {
        let dom = interval(-1.0, 1.0);
        assert!(simulate(&[vec![2.0]], &dom, &DriftSpec::Zero, None, &opts(0.5, 10), 0).is_err());
        assert!(simulate(&[vec![0.0]], &dom, &DriftSpec::Zero, None, &opts(-1.0, 10), 0).is_err());
        assert!(skorokhod_map(&[1.5, 0.0], &dom).is_err());
    }
}
