//! Shared fixtures for the benchmarks.

use rsbridge::{BoxDomain, Grid, GridDensity};

pub fn line(a: f64, b: f64, n: usize) -> Grid {
    Grid::uniform(BoxDomain::interval(a, b).unwrap(), n).unwrap()
}

/// The bimodal start and cosine target on `[-4, 4]` used throughout the examples.
pub fn endpoints(grid: &Grid) -> (GridDensity, GridDensity) {
    let rho0 = GridDensity::from_fn(grid.clone(), |x| 1.0 + (x[0] * x[0] - 16.0).powi(2) * (-x[0] / 2.0).exp());
    let rho1 = GridDensity::from_fn(grid.clone(), |x| 1.2 - (std::f64::consts::PI * (x[0] + 4.0) / 2.0).cos());
    (rho0.unwrap().normalize().unwrap(), rho1.unwrap().normalize().unwrap())
}
