//! Transition density of two-sided reflected Brownian motion on `[a, b]`.
//!
//! Two evaluation routes compute the same kernel:
//!
//! * the Neumann eigenfunction (cosine) series, fast for moderate and large `t`;
//! * the Gaussian method-of-images sum, fast for small `t` and positive term by term.
//!
//! [`ReflectedHeatKernel::eval`] and the matrix/operator builders switch to the
//! image sum when the cosine series would need more than [`MAX_SERIES_TERMS`].

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;

use crate::domain::{BoxDomain, Grid};
use crate::error::{Error, Result};

/// Cosine truncations above this are refused by [`ReflectedHeatKernel::required_terms`].
pub const MAX_SERIES_TERMS: usize = 10_000;

/// Truncation tolerance used by the automatic evaluation paths.
pub const AUTO_TOL: f64 = 1e-15;

/// Pointwise cosine values below this are only accurate in absolute terms.
const RESOLVE_FLOOR: f64 = 1e-10;

/// `K_θ(x, y, t)` on `[a, b]` with a cosine truncation of `series_terms` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedHeatKernel {
    a: f64,
    b: f64,
    theta: f64,
    series_terms: usize,
}

impl ReflectedHeatKernel {
    pub fn new(interval: &BoxDomain, theta: f64, series_terms: usize) -> Result<Self> {
        if interval.dim() != 1 {
            return Err(Error::InvalidDomain("the reflected heat kernel lives on an interval".into()));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidConfig(format!("theta must be positive, got {theta}")));
        }
        if series_terms == 0 {
            return Err(Error::InvalidConfig("series_terms must be at least 1".into()));
        }
        Ok(Self { a: interval.lower()[0], b: interval.upper()[0], theta, series_terms })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn series_terms(&self) -> usize {
        self.series_terms
    }

    pub fn with_series_terms(&self, series_terms: usize) -> Self {
        Self { series_terms: series_terms.max(1), ..self.clone() }
    }

    fn width(&self) -> f64 {
        self.b - self.a
    }

    /// Exponent rate `c` in `exp(−c·m²)`.
    fn decay_rate(&self, t: f64) -> f64 {
        self.theta * PI * PI * t / (self.width() * self.width())
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if self.a <= x && x <= self.b {
            Ok(())
        } else {
            Err(Error::OutOfDomain { point: x, lower: self.a, upper: self.b })
        }
    }

    fn check_time(t: f64) -> Result<()> {
        if t > 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("kernel time must be positive, got {t}")))
        }
    }

    /// Cosine series truncated after `series_terms` terms.
    pub fn eval_cosine(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Self::check_time(t)?;
        Ok(self.cosine_sum(x, y, t, self.series_terms))
    }

    fn cosine_sum(&self, x: f64, y: f64, t: f64, terms: usize) -> f64 {
        let r = self.width();
        let c = self.decay_rate(t);
        let (px, py) = (PI * (x - self.a) / r, PI * (y - self.a) / r);
        let mut sum = 0.0;
        for m in 1..=terms {
            let e = (-c * (m * m) as f64).exp();
            if e == 0.0 {
                break;
            }
            let mf = m as f64;
            // product of the two cosines first keeps K(x,y) == K(y,x) bitwise
            sum += e * ((mf * px).cos() * (mf * py).cos());
        }
        (1.0 + 2.0 * sum) / r
    }

    /// Method-of-images sum over `m = −n_images..=n_images`.
    pub fn eval_images(&self, x: f64, y: f64, t: f64, n_images: usize) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Self::check_time(t)?;
        Ok(self.image_sum(x, y, t, n_images))
    }

    fn image_sum(&self, x: f64, y: f64, t: f64, n_images: usize) -> f64 {
        let r = self.width();
        let (xt, yt) = (x - self.a, y - self.a);
        let denom = 4.0 * self.theta * t;
        let n = n_images as i64;
        let mut sum = 0.0;
        for m in -n..=n {
            let shift = 2.0 * m as f64 * r;
            let s1 = shift - xt - yt;
            let s2 = shift - xt + yt;
            sum += (-s1 * s1 / denom).exp() + (-s2 * s2 / denom).exp();
        }
        sum / (PI * denom).sqrt()
    }

    /// Majorant of the cosine tail `Σ_{m>M}` at time `t`, prefactor `2/(b−a)` included.
    pub fn tail_bound(&self, t: f64, terms: usize) -> f64 {
        let c = self.decay_rate(t);
        let m1 = (terms + 1) as f64;
        2.0 / self.width() * (-c * m1 * m1).exp() / -(-c * (2.0 * terms as f64 + 3.0)).exp_m1()
    }

    /// Smallest truncation whose tail majorant is below `tol`.
    pub fn required_terms(&self, t: f64, tol: f64) -> Result<usize> {
        Self::check_time(t)?;
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
        }
        // tail_bound is decreasing in M: bisect over [1, MAX_SERIES_TERMS]
        if self.tail_bound(t, MAX_SERIES_TERMS) >= tol {
            return Err(Error::Diverged { t, limit: MAX_SERIES_TERMS });
        }
        let (mut lo, mut hi) = (1usize, MAX_SERIES_TERMS);
        if self.tail_bound(t, lo) < tol {
            return Ok(lo);
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.tail_bound(t, mid) < tol {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Number of images for which the dropped Gaussian terms are below `1e-300`.
    pub fn images_for(&self, t: f64) -> usize {
        // terms with |2mr| − 2r beyond sqrt(4θt·700) underflow
        let reach = (4.0 * self.theta * t * 700.0).sqrt();
        ((reach / (2.0 * self.width())).ceil() as usize + 1).max(1)
    }

    /// Which route the automatic evaluation takes at time `t`.
    pub fn route(&self, t: f64) -> Route {
        if self.tail_bound(t, self.series_terms) < AUTO_TOL {
            return Route::Cosine(self.series_terms);
        }
        match self.required_terms(t, AUTO_TOL) {
            Ok(m) => Route::Cosine(m.max(self.series_terms)),
            Err(_) => Route::Images(self.images_for(t)),
        }
    }

    /// Kernel value via the automatically selected route. Cosine values too
    /// small for the series to resolve are recomputed from the images.
    pub fn eval(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Self::check_time(t)?;
        Ok(match self.route(t) {
            Route::Cosine(m) => {
                let v = self.cosine_sum(x, y, t, m);
                if v < RESOLVE_FLOOR {
                    self.image_sum(x, y, t, self.images_for(t))
                } else {
                    v
                }
            }
            Route::Images(n) => self.image_sum(x, y, t, n),
        })
    }

    /// `A[i][j] = K(xᵢ, yⱼ, t)·wⱼ` with trapezoid weights `w`.
    pub fn kernel_matrix(&self, grid: &Grid, t: f64) -> Result<Array2<f64>> {
        self.check_grid(grid)?;
        Self::check_time(t)?;
        let n = grid.len();
        let w = grid.axis_weights(0);
        let mut a = match self.route(t) {
            Route::Cosine(m) => {
                let basis = CosineBasis::new(self, grid, m);
                let decay = self.decays(t, m);
                // K = 1/r + (2/r) Σ e_m C_m C_mᵀ, assembled as a scaled Gram product
                let mut scaled = Array2::<f64>::zeros((m, n));
                for k in 0..m {
                    let s = decay[k + 1].sqrt();
                    for j in 0..n {
                        scaled[[k, j]] = s * basis.row(k + 1)[j];
                    }
                }
                let r = self.width();
                let gram = scaled.t().dot(&scaled);
                gram.mapv(|g| (1.0 + 2.0 * g) / r)
            }
            Route::Images(k) => {
                let nodes = grid.axis_nodes(0);
                let mut a = Array2::<f64>::zeros((n, n));
                for i in 0..n {
                    for j in i..n {
                        let v = self.image_sum(nodes[i], nodes[j], t, k);
                        a[[i, j]] = v;
                        a[[j, i]] = v;
                    }
                }
                a
            }
        };
        for mut row in a.rows_mut() {
            for (v, wj) in row.iter_mut().zip(&w) {
                *v *= wj;
            }
        }
        Ok(a)
    }

    /// Linear map `f ↦ ∫ K(·, y, t) f(y) dy` at the grid nodes, in the cheapest exact form.
    pub fn operator(&self, grid: &Grid, t: f64) -> Result<KernelOperator> {
        self.check_grid(grid)?;
        Self::check_time(t)?;
        match self.route(t) {
            Route::Cosine(m) => {
                let basis = Arc::new(CosineBasis::new(self, grid, m));
                Ok(KernelOperator::Spectral { decay: self.decays(t, m), basis })
            }
            Route::Images(_) => Ok(KernelOperator::Dense(self.kernel_matrix(grid, t)?)),
        }
    }

    /// Same as [`operator`](Self::operator) but reusing an existing basis when it is large enough.
    pub fn operator_with(&self, basis: &Arc<CosineBasis>, t: f64) -> Result<KernelOperator> {
        Self::check_time(t)?;
        match self.route(t) {
            Route::Cosine(m) if m <= basis.terms() => {
                let mut decay = self.decays(t, m);
                decay.resize(basis.terms() + 1, 0.0);
                Ok(KernelOperator::Spectral { decay, basis: Arc::clone(basis) })
            }
            _ => self.operator(&basis.grid, t),
        }
    }

    /// `decay[m] = exp(−c m²)` for `m = 0..=terms`.
    fn decays(&self, t: f64, terms: usize) -> Vec<f64> {
        let c = self.decay_rate(t);
        (0..=terms).map(|m| (-c * (m * m) as f64).exp()).collect()
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        let d = grid.domain();
        if d.dim() != 1 || d.lower()[0] != self.a || d.upper()[0] != self.b {
            return Err(Error::DomainMismatch);
        }
        Ok(())
    }
}

/// Evaluation route chosen by [`ReflectedHeatKernel::route`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Cosine(usize),
    Images(usize),
}

/// Tabulated `cos(mπ(xⱼ−a)/r)` for `m = 0..=terms` on a 1D grid.
#[derive(Debug, Clone)]
pub struct CosineBasis {
    grid: Grid,
    terms: usize,
    width: f64,
    weights: Vec<f64>,
    table: Vec<f64>,
}

impl CosineBasis {
    pub fn new(kernel: &ReflectedHeatKernel, grid: &Grid, terms: usize) -> Self {
        let nodes = grid.axis_nodes(0);
        let n = nodes.len();
        let r = kernel.width();
        let mut table = Vec::with_capacity((terms + 1) * n);
        for m in 0..=terms {
            let k = m as f64 * PI / r;
            table.extend(nodes.iter().map(|&x| (k * (x - kernel.a)).cos()));
        }
        Self { grid: grid.clone(), terms, width: r, weights: grid.axis_weights(0), table }
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    fn row(&self, m: usize) -> &[f64] {
        let n = self.weights.len();
        &self.table[m * n..(m + 1) * n]
    }
}

/// Discretized kernel integral operator on a fixed grid.
#[derive(Debug, Clone)]
pub enum KernelOperator {
    /// Truncated eigen-expansion; `decay[m]` multiplies mode `m`.
    Spectral { basis: Arc<CosineBasis>, decay: Vec<f64> },
    /// Weighted kernel matrix `K(xᵢ, yⱼ)·wⱼ`.
    Dense(Array2<f64>),
}

impl KernelOperator {
    /// `(Af)ᵢ = Σⱼ K(xᵢ, yⱼ, t) wⱼ fⱼ`. The kernel is symmetric, so the same map
    /// serves the backward (`φ`) and forward (`φ̂`) integrals.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        match self {
            KernelOperator::Spectral { basis, decay } => {
                let n = basis.weights.len();
                let wf: Vec<f64> = f.iter().zip(&basis.weights).map(|(a, b)| a * b).collect();
                let mut out = vec![0.0; n];
                for (m, &e) in decay.iter().enumerate().take(basis.terms + 1) {
                    if e == 0.0 {
                        continue;
                    }
                    let row = basis.row(m);
                    let coeff: f64 = row.iter().zip(&wf).map(|(c, v)| c * v).sum();
                    let scale = if m == 0 { 1.0 } else { 2.0 } * e * coeff / basis.width;
                    for (o, c) in out.iter_mut().zip(row) {
                        *o += scale * c;
                    }
                }
                out
            }
            KernelOperator::Dense(a) => a.dot(&ndarray::ArrayView1::from(f)).to_vec(),
        }
    }
}
