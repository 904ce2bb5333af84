//! Minimal dense square-matrix support for the parser's closure matrices.

use crate::num::Real;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<R> {
    n: usize,
    data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![R::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, R::one());
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> R {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: R) {
        self.data[row * self.n + col] = value;
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: R) {
        self.data[row * self.n + col] += value;
    }

    /// Gauss-Jordan inverse with partial pivoting. `None` if singular.
    pub fn inverse(&self) -> Option<Matrix<R>> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            // pivot row with the largest magnitude in this column
            let mut pivot = col;
            for row in (col + 1)..n {
                if a.get(row, col).abs() > a.get(pivot, col).abs() {
                    pivot = row;
                }
            }
            let pv = a.get(pivot, col);
            if pv.abs() < R::from_f64_lossy(1e-12) {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    let (x, y) = (a.get(col, k), a.get(pivot, k));
                    a.set(col, k, y);
                    a.set(pivot, k, x);
                    let (x, y) = (inv.get(col, k), inv.get(pivot, k));
                    inv.set(col, k, y);
                    inv.set(pivot, k, x);
                }
            }
            let scale = R::one() / a.get(col, col);
            for k in 0..n {
                a.set(col, k, a.get(col, k) * scale);
                inv.set(col, k, inv.get(col, k) * scale);
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let factor = a.get(row, col);
                if factor == R::zero() {
                    continue;
                }
                for k in 0..n {
                    let v = a.get(row, k) - factor * a.get(col, k);
                    a.set(row, k, v);
                    let v = inv.get(row, k) - factor * inv.get(col, k);
                    inv.set(row, k, v);
                }
            }
        }
        Some(inv)
    }
}
