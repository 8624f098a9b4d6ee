//! Dense LU factorisation with partial pivoting.
//!
//! Models are desk scale (a few hundred states at most), so the solvers form
//! dense matrices and compute the 1-norm reciprocal condition number exactly
//! from the factorisation instead of estimating it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Systems whose reciprocal 1-norm condition number falls below this are
/// treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n).map(|j| (0..self.n).map(|i| libm::fabs(self[(i, j)])).sum::<f64>()).fold(0.0, f64::max)
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// `P·A = L·U` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct Lu {
    factors: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot is exactly zero.
    pub fn factor(a: &Matrix) -> Option<Self> {
        let n = a.n;
        let mut f = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, max) =
                (k..n)
                    .map(|i| (i, libm::fabs(f[(i, k)])))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if max == 0.0 || !max.is_finite() {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    f.data.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let pivot = f[(k, k)];
            for i in k + 1..n {
                let l = f[(i, k)] / pivot;
                f[(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        let ukj = f[(k, j)];
                        f[(i, j)] -= l * ukj;
                    }
                }
            }
        }
        Some(Self { factors: f, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.factors.n;
        let f = &self.factors;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= f[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= f[(i, j)] * x[j];
            }
            x[i] = s / f[(i, i)];
        }
        x
    }

    /// Exact `1 / (‖A‖₁ ‖A⁻¹‖₁)`, computed column by column from the factors.
    pub fn rcond(&self, a_norm1: f64) -> f64 {
        let n = self.factors.n;
        if n == 0 {
            return 1.0;
        }
        let mut e = vec![0.0; n];
        let mut inv_norm: f64 = 0.0;
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            let s: f64 = col.iter().map(|v| libm::fabs(*v)).sum();
            if !s.is_finite() {
                return 0.0;
            }
            inv_norm = inv_norm.max(s);
        }
        if a_norm1 == 0.0 || inv_norm == 0.0 {
            0.0
        } else {
            1.0 / (a_norm1 * inv_norm)
        }
    }
}

/// Solves `A x = b`, rejecting ill-conditioned systems as [`Error::Improper`].
///
/// Two rounds of iterative refinement follow the direct solve.
pub fn solve_checked(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = Lu::factor(a).ok_or(Error::Improper { rcond: 0.0 })?;
    let rcond = lu.rcond(a.norm1());
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(Error::Improper { rcond });
    }
    let mut x = lu.solve(b);
    for _ in 0..2 {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut a = Matrix::zeros(2);
        a[(0, 0)] = 0.0;
        a[(0, 1)] = 2.0;
        a[(1, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        let x = solve_checked(&a, &[4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rcond_of_identity_is_one() {
        let a = Matrix::identity(4);
        let lu = Lu::factor(&a).unwrap();
        assert_eq!(lu.rcond(a.norm1()), 1.0);
    }

    #[test]
    fn singular_matrix_rejected() {
        let mut a = Matrix::zeros(2);
        a[(0, 0)] = 1.0;
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        assert!(matches!(solve_checked(&a, &[1.0, 1.0]), Err(Error::Improper { .. })));
    }

    #[test]
    fn nearly_singular_matrix_rejected() {
        let mut a = Matrix::identity(2);
        a[(1, 1)] = 1e-14;
        assert!(matches!(solve_checked(&a, &[1.0, 1.0]), Err(Error::Improper { rcond }) if rcond < 1e-12));
    }
}
