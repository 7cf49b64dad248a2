//! Nonnegative nodal fields on a [`Grid`]: densities and Schrödinger factors.

use crate::domain::Grid;
use crate::error::{Error, Result};

/// Nonnegative nodal values on a grid.
///
/// The same type carries probability densities (flagged `normalized`) and
/// the unnormalized factors `φ`, `φ̂` and the transformed factor `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
    normalized: bool,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidValue { node, value });
        }
        Ok(Self { grid, values, normalized: false })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        let values = grid.sample(f);
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        let values = vec![c; grid.len()];
        Self::new(grid, values)
    }

    /// Skips validation; callers guarantee nonnegative finite values.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, normalized: false }
    }

    pub(crate) fn with_flag(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Tensor-product trapezoid quadrature of the nodal values.
    pub fn trapezoid_mass(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Rescales to unit trapezoid mass.
    pub fn normalize(&self) -> Result<Self> {
        let mass = self.trapezoid_mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::ZeroMass(mass));
        }
        let values = self.values.iter().map(|v| v / mass).collect();
        Ok(Self { grid: self.grid.clone(), values, normalized: true })
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|v| c * v).collect())
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Errors with the first node that is not strictly positive.
    pub fn require_positive(&self) -> Result<()> {
        match self.values.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            Some((node, &value)) => Err(Error::NonPositive { node, value }),
            None => Ok(()),
        }
    }

    pub fn same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }

    /// Trapezoid L¹ distance.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        self.same_grid(other)?;
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
        Ok(trapezoid(&self.grid, &diff))
    }

    /// Nodewise max-abs distance.
    pub fn linf_distance(&self, other: &GridDensity) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Nodewise product, e.g. `ρ = φ·φ̂`.
    pub fn hadamard(&self, other: &GridDensity) -> Result<GridDensity> {
        self.same_grid(other)?;
        Ok(Self::from_raw(self.grid.clone(), self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect()))
    }
}

/// Tensor-product trapezoid rule for flat nodal data on `grid`.
///
/// Sums are compensated, so constant data integrates to within an ulp or two.
pub fn trapezoid(grid: &Grid, values: &[f64]) -> f64 {
    match grid.dim() {
        1 => compensated_sum(grid.axis_weights(0).iter().zip(values).map(|(w, v)| w * v)),
        _ => {
            let w0 = grid.axis_weights(0);
            let w1 = grid.axis_weights(1);
            compensated_sum(
                values
                    .chunks(w1.len())
                    .zip(&w0)
                    .map(|(row, a)| a * compensated_sum(row.iter().zip(&w1).map(|(v, b)| v * b))),
            )
        }
    }
}

/// Neumaier summation.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Free-function form of [`GridDensity::trapezoid_mass`].
pub fn trapezoid_mass(d: &GridDensity) -> f64 {
    d.trapezoid_mass()
}

/// Free-function form of [`GridDensity::normalize`].
pub fn normalize(d: &GridDensity) -> Result<GridDensity> {
    d.normalize()
}
