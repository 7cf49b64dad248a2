use crate::density::{trapezoid, GridDensity};
use crate::drift::DriftSpec;

/// Free energy `F(ϱ) = ∫Vϱ + θ∫ϱ log ϱ`, the Lyapunov functional of the
/// uncontrolled flow.
#[derive(Debug, Clone)]
pub struct LyapunovFunctional {
    pub drift: DriftSpec,
    pub theta: f64,
}

impl LyapunovFunctional {
    pub fn new(drift: DriftSpec, theta: f64) -> Self {
        Self { drift, theta }
    }

    /// Trapezoid quadrature of `Vϱ + θϱ log ϱ`; nodes with `ϱ = 0` contribute `V·0 + 0`.
    pub fn value(&self, d: &GridDensity) -> f64 {
        let grid = d.grid();
        let integrand: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(d.values())
            .map(|(x, &r)| {
                let ent = if r > 0.0 { r * r.ln() } else { 0.0 };
                self.drift.potential(x) * r + self.theta * ent
            })
            .collect();
        trapezoid(grid, &integrand)
    }
}

pub fn lyapunov_value(l: &LyapunovFunctional, d: &GridDensity) -> f64 {
    l.value(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoxDomain, Grid};
    use crate::drift::PolynomialPotential;
    use crate::fpk::{march_observed, FpkProblem, MarchMode};

    #[test]
    fn uniform_entropy() {
        for (a, b) in [(0.0, 1.0), (-4.0, 4.0), (2.0, 2.5)] {
            let g = Grid::uniform(BoxDomain::interval(a, b).unwrap(), 101).unwrap();
            let d = GridDensity::constant(g, 1.0 / (b - a)).unwrap();
            let f = LyapunovFunctional::new(DriftSpec::Zero, 0.5).value(&d);
            assert!((f + 0.5 * (b - a).ln()).abs() < 1e-14);
        }
        let g = Grid::uniform(BoxDomain::interval(-4.0, 4.0).unwrap(), 801).unwrap();
        let d = GridDensity::constant(g, 0.125).unwrap();
        let f = lyapunov_value(&LyapunovFunctional::new(DriftSpec::Zero, 0.5), &d);
        assert!((f - (-1.0397207708399179)).abs() < 1e-12);
    }

    #[test]
    fn decreases_along_uncontrolled_2d_march() {
        let drift = DriftSpec::gradient(PolynomialPotential { coefficients: vec![(0.2, 0.0), (0.0, 0.2)] });
        let grid = Grid::uniform(BoxDomain::square(-4.0, 4.0).unwrap(), 41).unwrap();
        let p = FpkProblem::new(grid.clone(), drift.clone(), 0.5, 1e-3).unwrap();
        let l = LyapunovFunctional::new(drift, 0.5);
        let d0 = GridDensity::from_fn(grid.clone(), |x| (-(x[0] - 2.0).powi(2) - (x[1] - 2.0).powi(2)).exp())
            .unwrap()
            .normalize()
            .unwrap();
        let mut trace = Vec::new();
        march_observed(&p, &d0, 200, MarchMode::Forward, |_, v| {
            trace.push(l.value(&GridDensity::new(grid.clone(), v.to_vec()).unwrap()));
        })
        .unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} → {}", w[0], w[1]);
        }
        assert!(trace[200] < trace[0] - 0.1);
    }
}
