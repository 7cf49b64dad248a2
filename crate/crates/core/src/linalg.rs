//! Small linear-algebra kernels used by the finite-volume engine.

use crate::error::{Error, Result};

/// Tridiagonal matrix factored once for repeated solves (Thomas algorithm).
///
/// Row `i` reads `lower[i]·x[i−1] + diag[i]·x[i] + upper[i]·x[i+1]`.
/// No pivoting: intended for column diagonally dominant M-matrices, for which
/// every elimination step only adds nonnegative quantities and nonnegative
/// right-hand sides give nonnegative solutions in floating point too.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        assert!(lower.len() == n && upper.len() == n);
        let mut upper_mod = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = diag[i] - if i > 0 { lower[i] * prev } else { 0.0 };
            if !(pivot.abs() > 0.0) || !pivot.is_finite() {
                return Err(Error::LinearSolveFailure(format!("zero pivot at row {i}")));
            }
            inv_pivot[i] = 1.0 / pivot;
            upper_mod[i] = upper[i] * inv_pivot[i];
            prev = upper_mod[i];
        }
        Ok(Self { lower: lower.to_vec(), upper_mod, inv_pivot })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Solves in place: `rhs` holds `b` on entry and `x` on exit.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_mod[i] * rhs[i + 1];
        }
    }

    /// Strided variant: solves for the entries `rhs[offset + k·stride]`.
    pub fn solve_strided(&self, rhs: &mut [f64], offset: usize, stride: usize) {
        let n = self.len();
        let at = |k: usize| offset + k * stride;
        rhs[at(0)] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[at(i)] = (rhs[at(i)] - self.lower[i] * rhs[at(i - 1)]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[at(i)] -= self.upper_mod[i] * rhs[at(i + 1)];
        }
    }
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive definite
/// operator given as a closure. Stops when `‖r‖₂ ≤ tol·‖b‖₂`.
pub fn conjugate_gradient<F>(apply: F, diag: &[f64], b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * b_norm {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolveFailure(format!("operator not positive definite (pᵀAp = {pap:e})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / b_norm;
    if res <= tol {
        Ok(max_iter)
    } else {
        Err(Error::LinearSolveFailure(format!("CG stalled at relative residual {res:e} after {max_iter} iterations")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_solves_small_system() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] → x = [1 1 1]
        let t = Tridiagonal::factor(&[0.0, -1.0, -1.0], &[2.0, 2.0, 2.0], &[-1.0, -1.0, 0.0]).unwrap();
        let mut b = vec![1.0, 0.0, 1.0];
        t.solve_in_place(&mut b);
        for v in b {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn strided_matches_contiguous() {
        let t = Tridiagonal::factor(&[0.0, -0.3, -0.2, -0.1], &[1.5, 1.7, 1.9, 1.1], &[-0.4, -0.5, -0.6, 0.0]).unwrap();
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let mut c = b.clone();
        t.solve_in_place(&mut c);
        let mut s = vec![0.0; 12];
        for (k, v) in b.iter().enumerate() {
            s[1 + 3 * k] = *v;
        }
        t.solve_strided(&mut s, 1, 3);
        for k in 0..4 {
            assert_eq!(s[1 + 3 * k], c[k]);
        }
    }

    #[test]
    fn singular_pivot_is_reported() {
        assert!(Tridiagonal::factor(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cg_solves_laplacian() {
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 3.0 * x[i] - l - r;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        conjugate_gradient(apply, &vec![3.0; n], &b, &mut x, 1e-13, 200).unwrap();
        let mut y = vec![0.0; n];
        apply(&x, &mut y);
        for (u, v) in y.iter().zip(&b) {
            assert!((u - v).abs() < 1e-11);
        }
    }
}
