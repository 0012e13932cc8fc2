//! Tiny dense solvers for the handful-of-parameters systems used by the fits.

use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Solves A·x = b by Gaussian elimination with partial pivoting.
    /// Returns `None` for a numerically singular matrix.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if scale == T::zero() {
            return None;
        }
        let tiny = scale * T::epsilon() * T::from_usize_lossy(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())
                .unwrap();
            if !(a[pivot * n + col].abs() > tiny) {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                x.swap(col, pivot);
            }
            for row in col + 1..n {
                let f = a[row * n + col] / a[col * n + col];
                if f == T::zero() {
                    continue;
                }
                for k in col..n {
                    a[row * n + k] = a[row * n + k] - f * a[col * n + k];
                }
                x[row] = x[row] - f * x[col];
            }
        }
        for row in (0..n).rev() {
            let mut acc = x[row];
            for k in row + 1..n {
                acc = acc - a[row * n + k] * x[k];
            }
            x[row] = acc / a[row * n + row];
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        let mut inv = Self::zeros(n);
        for col in 0..n {
            let mut e = vec![T::zero(); n];
            e[col] = T::one();
            let x = self.solve(&e)?;
            for row in 0..n {
                inv[(row, col)] = x[row];
            }
        }
        Some(inv)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Linear least squares via normal equations: minimizes Σ(design·p − y)².
pub fn linear_least_squares<T: Scalar>(design: &[Vec<T>], y: &[T]) -> Option<Vec<T>> {
    let p = design.first()?.len();
    let mut ata = Matrix::zeros(p);
    let mut aty = vec![T::zero(); p];
    for (row, &yi) in design.iter().zip(y) {
        for i in 0..p {
            aty[i] = aty[i] + row[i] * yi;
            for j in 0..p {
                ata[(i, j)] = ata[(i, j)] + row[i] * row[j];
            }
        }
    }
    ata.solve(&aty)
}
