//! Prior drift of the uncontrolled diffusion.

use std::fmt;
use std::sync::Arc;

/// A scalar potential `V` with analytic gradient. The prior drift is `f = −∇V`.
pub trait Potential: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    /// Writes `∇V(x)` into `grad` (same length as `x`).
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
}

/// Potential built from a pair of closures.
pub struct FnPotential<V, G> {
    value: V,
    gradient: G,
}

impl<V, G> FnPotential<V, G>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(value: V, gradient: G) -> Self {
        Self { value, gradient }
    }
}

impl<V, G> Potential for FnPotential<V, G>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.gradient)(x, grad)
    }
}

/// Quadratic-plus-cubic family `V(x) = Σᵢ (cᵢ₂ xᵢ² + cᵢ₃ xᵢ³)`; covers the
/// worked examples and is convenient in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialPotential {
    /// `(quadratic, cubic)` coefficient per axis.
    pub coefficients: Vec<(f64, f64)>,
}

impl Potential for PolynomialPotential {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(&xi, &(c2, c3))| c2 * xi * xi + c3 * xi * xi * xi).sum()
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for ((g, &xi), &(c2, c3)) in grad.iter_mut().zip(x).zip(&self.coefficients) {
            *g = 2.0 * c2 * xi + 3.0 * c3 * xi * xi;
        }
    }
}

/// Prior drift: none, or the negative gradient of a potential.
#[derive(Clone, Default)]
pub enum DriftSpec {
    #[default]
    Zero,
    GradientPotential(Arc<dyn Potential>),
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftSpec::Zero => write!(f, "Zero"),
            DriftSpec::GradientPotential(_) => write!(f, "GradientPotential(..)"),
        }
    }
}

impl DriftSpec {
    pub fn gradient<P: Potential + 'static>(potential: P) -> Self {
        DriftSpec::GradientPotential(Arc::new(potential))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DriftSpec::Zero)
    }

    /// `V(x)`; identically zero for [`DriftSpec::Zero`].
    pub fn potential(&self, x: &[f64]) -> f64 {
        match self {
            DriftSpec::Zero => 0.0,
            DriftSpec::GradientPotential(p) => p.value(x),
        }
    }

    /// Writes the drift `f(x) = −∇V(x)` into `out`.
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftSpec::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            DriftSpec::GradientPotential(p) => {
                p.gradient(x, out);
                out.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
}
