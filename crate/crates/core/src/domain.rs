//! Box domains and the uniform tensor grids laid over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned closed box `[a₁,b₁] × … × [aₙ,bₙ]` with `n ∈ {1, 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for BoxDomain {
    type Error = Error;
    fn try_from(raw: RawBox) -> Result<Self> {
        BoxDomain::new(raw.lower, raw.upper)
    }
}

impl From<BoxDomain> for RawBox {
    fn from(b: BoxDomain) -> Self {
        RawBox { lower: b.lower, upper: b.upper }
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        if !(1..=2).contains(&lower.len()) {
            return Err(Error::InvalidDomain(format!("dimension {} not in {{1, 2}}", lower.len())));
        }
        for (i, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidDomain(format!("axis {i}: need finite lower < upper, got [{a}, {b}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a], vec![b])
    }

    pub fn square(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a, a], vec![b, b])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Closed-box membership, no tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&a, &b))| a <= v && v <= b)
    }

    /// Inward unit normal on a face: `+eᵢ` on the lower face, `−eᵢ` on the upper face.
    /// Returns `None` off the boundary. At corners the first matching face wins.
    pub fn inward_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        for axis in 0..self.dim() {
            let sign = if x[axis] <= self.lower[axis] {
                1.0
            } else if x[axis] >= self.upper[axis] {
                -1.0
            } else {
                continue;
            };
            let mut n = vec![0.0; self.dim()];
            n[axis] = sign;
            return Some(n);
        }
        None
    }
}

/// Uniform tensor grid over a [`BoxDomain`], boundary nodes included.
///
/// Nodal values are stored row-major: in 2D the flat index of node `(i, j)`
/// is `i * n₂ + j`, with `i` running along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    domain: BoxDomain,
    points: Vec<usize>,
}

impl Grid {
    pub fn new(domain: BoxDomain, points: Vec<usize>) -> Result<Self> {
        if points.len() != domain.dim() {
            return Err(Error::InvalidGrid(format!(
                "{} point counts for a {}-dimensional domain",
                points.len(),
                domain.dim()
            )));
        }
        if let Some(&p) = points.iter().find(|&&p| p < 3) {
            return Err(Error::InvalidGrid(format!("need at least 3 points per axis, got {p}")));
        }
        Ok(Self { domain, points })
    }

    /// Same number of points on every axis.
    pub fn uniform(domain: BoxDomain, points: usize) -> Result<Self> {
        let dim = domain.dim();
        Self::new(domain, vec![points; dim])
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.width(axis) / (self.points[axis] - 1) as f64
    }

    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        let n = self.points[axis];
        let a = self.domain.lower[axis];
        let b = self.domain.upper[axis];
        let h = self.spacing(axis);
        // pin the last node so the boundary is hit exactly
        (0..n).map(|i| if i + 1 == n { b } else { a + i as f64 * h }).collect()
    }

    /// One-dimensional trapezoid weights along an axis.
    pub fn axis_weights(&self, axis: usize) -> Vec<f64> {
        let n = self.points[axis];
        let h = self.spacing(axis);
        let mut w = vec![h; n];
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
        w
    }

    /// Tensor-product trapezoid weights, one per node.
    pub fn weights(&self) -> Vec<f64> {
        match self.dim() {
            1 => self.axis_weights(0),
            _ => {
                let w0 = self.axis_weights(0);
                let w1 = self.axis_weights(1);
                w0.iter().flat_map(|&a| w1.iter().map(move |&b| a * b)).collect()
            }
        }
    }

    /// The 1D grid along one axis.
    pub fn axis_grid(&self, axis: usize) -> Grid {
        let domain = BoxDomain { lower: vec![self.domain.lower[axis]], upper: vec![self.domain.upper[axis]] };
        Grid { domain, points: vec![self.points[axis]] }
    }

    /// Multi-index of a flat node index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim() {
            1 => [idx, 0],
            _ => [idx / self.points[1], idx % self.points[1]],
        }
    }

    /// Coordinates of every node, flat order.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|a| self.axis_nodes(a)).collect();
        (0..self.len())
            .map(|idx| {
                let mi = self.multi_index(idx);
                (0..self.dim()).map(|a| axes[a][mi[a]]).collect()
            })
            .collect()
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes().iter().map(|x| f(x)).collect()
    }

    /// True when the node sits on a face normal to `axis`.
    pub fn on_face(&self, idx: usize, axis: usize) -> bool {
        let i = self.multi_index(idx)[axis];
        i == 0 || i + 1 == self.points[axis]
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        (0..self.dim()).any(|a| self.on_face(idx, a))
    }

    /// Diffusion number `θ·dt/h²` of the finest axis.
    pub fn diffusion_number(&self, theta: f64, dt: f64) -> f64 {
        (0..self.dim()).map(|a| theta * dt / self.spacing(a).powi(2)).fold(0.0, f64::max)
    }
}
