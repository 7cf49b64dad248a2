use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rsbridge::bridge;
use rsbridge::fpk::{prox_step_jko, step_backward_factor, step_forward};
use rsbridge::sde::{inverse_cdf_sample, simulate, SimOptions};
use rsbridge::{BoxDomain, DriftSpec, FpkProblem, Grid, GridDensity, KernelEngine, PolynomialPotential, ReflectedHeatKernel, SolverConfig};
use rsbridge_bench::{endpoints, line};

fn kernel(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel");
    for n in [201, 801] {
        let grid = line(-4.0, 4.0, n);
        let k = ReflectedHeatKernel::new(grid.domain(), 0.5, 100).unwrap();
        let op = k.operator(&grid, 0.5).unwrap();
        let f = endpoints(&grid).0;
        g.bench_with_input(BenchmarkId::new("apply", n), &n, |b, _| b.iter(|| op.apply(f.values())));
        g.bench_with_input(BenchmarkId::new("matrix", n), &n, |b, _| b.iter(|| k.kernel_matrix(&grid, 0.5).unwrap()));
    }
    g.finish();
}

fn fpk(c: &mut Criterion) {
    let mut g = c.benchmark_group("fpk");
    let grid = line(-4.0, 4.0, 801);
    let quad = DriftSpec::gradient(PolynomialPotential { coefficients: vec![(0.2, 0.0)] });
    let p = FpkProblem::new(grid.clone(), quad, 0.5, 1e-3).unwrap();
    let d = endpoints(&grid).0;
    g.bench_function("forward_1d_801", |b| b.iter(|| step_forward(&p, &d).unwrap()));
    g.bench_function("backward_1d_801", |b| b.iter(|| step_backward_factor(&p, &d).unwrap()));
    g.bench_function("prox_1d_801", |b| b.iter(|| prox_step_jko(&p, &d, 1e-3).unwrap()));

    let square = Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 101).unwrap();
    let drift = DriftSpec::gradient(PolynomialPotential { coefficients: vec![(0.2, 0.0), (0.0, 0.2)] });
    let p2 = FpkProblem::new(square.clone(), drift, 0.5, 1e-3).unwrap();
    let d2 = GridDensity::from_fn(square, |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap().normalize().unwrap();
    g.bench_function("forward_2d_101", |b| b.iter(|| step_forward(&p2, &d2).unwrap()));
    g.finish();
}

fn bridge_solve(c: &mut Criterion) {
    let grid = line(-4.0, 4.0, 801);
    let (rho0, rho1) = endpoints(&grid);
    let config = SolverConfig::default();
    let engine: rsbridge::Engine = KernelEngine::new(grid, 0.5, 100).unwrap().into();
    let mut g = c.benchmark_group("bridge");
    g.sample_size(10);
    g.bench_function("kernel_1d_801", |b| b.iter(|| bridge::solve(&rho0, &rho1, &config, engine.clone()).unwrap()));
    g.finish();
}

fn ensemble(c: &mut Criterion) {
    let grid = line(-4.0, 4.0, 801);
    let rho0 = endpoints(&grid).0;
    let init = inverse_cdf_sample(&rho0, 1000, 1).unwrap();
    let options = SimOptions::from_config(&SolverConfig::default()).with_record_every(100);
    let mut g = c.benchmark_group("sde");
    g.sample_size(10);
    g.bench_function("open_loop_1000_paths", |b| {
        b.iter(|| simulate(&init, grid.domain(), &DriftSpec::Zero, None, &options, 7).unwrap())
    });
    g.finish();
}

criterion_group!(benches, kernel, fpk, bridge_solve, ensemble);
criterion_main!(benches);
