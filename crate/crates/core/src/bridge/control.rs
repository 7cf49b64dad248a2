use serde::{Deserialize, Serialize};

use crate::domain::Grid;
use crate::error::{Error, Result};

/// `u = 2θ∇log φ` at every node, component-major (`out[axis][node]`).
///
/// Central differences everywhere except along an axis normal to the face a
/// node sits on, where the component is set to zero. On a box no one-sided
/// stencil is ever needed: a face node always has both neighbours along the
/// tangential axes.
pub fn control_from_factor(grid: &Grid, theta: f64, phi: &[f64]) -> Result<Vec<Vec<f64>>> {
    if let Some((node, &value)) = phi.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive { node, value });
    }
    let log: Vec<f64> = phi.iter().map(|v| v.ln()).collect();
    let dim = grid.dim();
    let stride = |axis: usize| if dim == 2 && axis == 0 { grid.points()[1] } else { 1 };
    let mut out = vec![vec![0.0; grid.len()]; dim];
    for (axis, comp) in out.iter_mut().enumerate() {
        let s = stride(axis);
        let h = grid.spacing(axis);
        for (k, u) in comp.iter_mut().enumerate() {
            if grid.on_face(k, axis) {
                continue;
            }
            *u = 2.0 * theta * (log[k + s] - log[k - s]) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Feedback control sampled on a grid at increasing times; linear in time,
/// multilinear in space.
///
/// Nodal normal components on the faces are zero, so the interpolant's normal
/// component vanishes on the boundary itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    grid: Grid,
    times: Vec<f64>,
    /// `values[time][axis][node]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl ControlField {
    pub fn new(grid: Grid, times: Vec<f64>, values: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidConfig(format!("{} control times for {} snapshots", times.len(), values.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("control times must increase strictly".into()));
        }
        for v in &values {
            if v.len() != grid.dim() || v.iter().any(|c| c.len() != grid.len()) {
                return Err(Error::InvalidGrid("control snapshot does not match the grid".into()));
            }
        }
        Ok(Self { grid, times, values })
    }

    /// The zero field, for open-loop runs.
    pub fn zero(grid: Grid) -> Self {
        let values = vec![vec![vec![0.0; grid.len()]; grid.dim()]];
        Self { grid, times: vec![0.0], values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshot(&self, k: usize) -> &[Vec<f64>] {
        &self.values[k]
    }

    /// Writes `u(t, x)` into `out`. Times outside the sampled span are held at
    /// the nearest end; points outside the box are an error. Each component
    /// vanishes within one cell of the faces normal to its axis.
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.grid.domain().contains(x) {
            return Err(Error::ControlOutOfRange(x.to_vec()));
        }
        let (k, lambda) = match self.times.partition_point(|&s| s <= t) {
            0 => (0, 0.0),
            p if p >= self.times.len() => (self.times.len() - 1, 0.0),
            p => (p - 1, (t - self.times[p - 1]) / (self.times[p] - self.times[p - 1])),
        };
        let stencil = self.stencil(x);
        for (axis, o) in out.iter_mut().enumerate().take(self.grid.dim()) {
            let at = |snap: usize| stencil.iter().map(|&(node, w)| w * self.values[snap][axis][node]).sum::<f64>();
            *o = if lambda > 0.0 { (1.0 - lambda) * at(k) + lambda * at(k + 1) } else { at(k) };
            let (h, d) = (self.grid.spacing(axis), self.grid.domain());
            if x[axis] - d.lower()[axis] < h || d.upper()[axis] - x[axis] < h {
                *o = 0.0;
            }
        }
        Ok(())
    }

    /// Nodes and multilinear weights of the cell containing `x`.
    fn stencil(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let lower = self.grid.domain().lower();
        let locate = |axis: usize| {
            let n = self.grid.points()[axis];
            let r = (x[axis] - lower[axis]) / self.grid.spacing(axis);
            let i = (r.floor().max(0.0) as usize).min(n - 2);
            (i, (r - i as f64).clamp(0.0, 1.0))
        };
        match self.grid.dim() {
            1 => {
                let (i, f) = locate(0);
                vec![(i, 1.0 - f), (i + 1, f)]
            }
            _ => {
                let n1 = self.grid.points()[1];
                let ((i, f), (j, g)) = (locate(0), locate(1));
                vec![
                    (i * n1 + j, (1.0 - f) * (1.0 - g)),
                    (i * n1 + j + 1, (1.0 - f) * g),
                    ((i + 1) * n1 + j, f * (1.0 - g)),
                    ((i + 1) * n1 + j + 1, f * g),
                ]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoxDomain;

    #[test]
    fn constant_factor_gives_zero_control() {
        let g = Grid::uniform(BoxDomain::square(-1.0, 1.0).unwrap(), 11).unwrap();
        let u = control_from_factor(&g, 0.5, &vec![3.0; g.len()]).unwrap();
        assert!(u.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn gaussian_factor_gives_identity_control() {
        // φ = exp(x²/(4θ)) ⇒ 2θ ∂ₓ log φ = x
        let theta = 0.5;
        let err = |n: usize| {
            let g = Grid::uniform(BoxDomain::interval(-2.0, 2.0).unwrap(), n).unwrap();
            let phi = g.sample(|x| (x[0] * x[0] / (4.0 * theta)).exp());
            let u = control_from_factor(&g, theta, &phi).unwrap();
            let nodes = g.axis_nodes(0);
            assert_eq!(u[0][0], 0.0);
            assert_eq!(u[0][n - 1], 0.0);
            (1..n - 1).map(|i| (u[0][i] - nodes[i]).abs()).fold(0.0, f64::max)
        };
        // log φ is quadratic, so central differences are exact up to rounding
        assert!(err(41) < 1e-12);
        let g = Grid::uniform(BoxDomain::interval(-2.0, 2.0).unwrap(), 81).unwrap();
        let phi = g.sample(|x| (x[0].powi(3)).exp());
        let u = control_from_factor(&g, theta, &phi).unwrap();
        let x = g.axis_nodes(0);
        let h = g.spacing(0);
        for i in 1..80 {
            assert!((u[0][i] - 3.0 * x[i] * x[i]).abs() <= 2.0 * h * h);
        }
    }

    #[test]
    fn boundary_normal_components_vanish_in_2d() {
        let g = Grid::uniform(BoxDomain::square(-1.0, 1.0).unwrap(), 9).unwrap();
        let phi = g.sample(|x| (x[0] + 2.0 * x[1]).exp());
        let u = control_from_factor(&g, 0.5, &phi).unwrap();
        for k in 0..g.len() {
            for axis in 0..2 {
                if g.on_face(k, axis) {
                    assert_eq!(u[axis][k], 0.0);
                } else {
                    assert!((u[axis][k] - (1.0 + axis as f64)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nonpositive_factor_is_rejected() {
        let g = Grid::uniform(BoxDomain::interval(0.0, 1.0).unwrap(), 5).unwrap();
        assert!(matches!(control_from_factor(&g, 0.5, &[1.0, 1.0, 0.0, 1.0, 1.0]), Err(Error::NonPositive { node: 2, .. })));
    }

    #[test]
    fn interpolation_is_linear_in_time_and_space() {
        let g = Grid::uniform(BoxDomain::square(0.0, 2.0).unwrap(), 5).unwrap();
        let snap = |c: f64| vec![g.sample(|x| c * (x[0] + x[1])), g.sample(|x| c * x[0] * x[1])];
        let f = ControlField::new(g.clone(), vec![0.0, 1.0], vec![snap(1.0), snap(3.0)]).unwrap();
        let mut u = [0.0; 2];
        f.eval(0.5, &[0.8, 1.1], &mut u).unwrap();
        // bilinear interpolation reproduces x + y and xy exactly; time factor 2
        assert!((u[0] - 2.0 * 1.9).abs() < 1e-14);
        assert!((u[1] - 2.0 * 0.88).abs() < 1e-14);
        assert!(matches!(f.eval(0.2, &[2.2, 0.0], &mut u), Err(Error::ControlOutOfRange(_))));
    }

    #[test]
    fn normal_components_vanish_in_the_boundary_cells() {
        let g = Grid::uniform(BoxDomain::square(0.0, 2.0).unwrap(), 5).unwrap();
        let ones = vec![g.sample(|_| 1.0), g.sample(|_| 1.0)];
        let f = ControlField::new(g.clone(), vec![0.0], vec![ones]).unwrap();
        let mut u = [0.0; 2];
        f.eval(0.0, &[0.3, 1.0], &mut u).unwrap();
        assert_eq!(u, [0.0, 1.0]);
        f.eval(0.0, &[1.0, 1.9], &mut u).unwrap();
        assert_eq!(u, [1.0, 0.0]);
        f.eval(0.0, &[1.0, 1.0], &mut u).unwrap();
        assert_eq!(u, [1.0, 1.0]);
    }
}
