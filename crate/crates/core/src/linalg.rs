//! Small dense linear algebra: partial-pivot LU for the routing systems.

use crate::scalar::Real;

pub type Matrix<T> = Vec<Vec<T>>;

/// Row-major LU factors with row permutation, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactors<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> LuFactors<T> {
    /// Factorizes a square matrix. Returns `None` when a pivot falls below
    /// `pivot_tol * max|a_ij|`, which is how singular routing systems are detected.
    pub fn factorize(a: &[Vec<T>]) -> Option<Self> {
        let n = a.len();
        if a.iter().any(|row| row.len() != n) {
            return None;
        }
        let scale = a
            .iter()
            .flat_map(|row| row.iter())
            .fold(T::zero(), |m, &x| m.max(x.abs()));
        if n > 0 && scale == T::zero() {
            return None;
        }
        let threshold = T::pivot_tol() * scale.max(T::one());
        let mut lu: Matrix<T> = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();

        for col in 0..n {
            let (pivot_row, pivot_abs) = (col..n)
                .map(|r| (r, lu[r][col].abs()))
                .fold((col, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs <= threshold || !pivot_abs.is_finite() {
                return None;
            }
            lu.swap(col, pivot_row);
            perm.swap(col, pivot_row);
            let pivot = lu[col][col];
            for r in col + 1..n {
                let factor = lu[r][col] / pivot;
                lu[r][col] = factor;
                if factor != T::zero() {
                    for c in col + 1..n {
                        let upd = factor * lu[col][c];
                        lu[r][c] = lu[r][c] - upd;
                    }
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.len();
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                y[i] = y[i] - self.lu[i][k] * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] = y[i] - self.lu[i][k] * y[k];
            }
            y[i] = y[i] / self.lu[i][i];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lu.len();
        let mut cols = Vec::with_capacity(n);
        for c in 0..n {
            let mut e = vec![T::zero(); n];
            e[c] = T::one();
            cols.push(self.solve(&e));
        }
        (0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect()
    }
}

pub fn mat_vec<T: Real>(a: &[Vec<T>], x: &[T]) -> Vec<T> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(&m, &v)| m * v).sum())
        .collect()
}
