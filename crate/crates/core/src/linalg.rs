//! Small dense linear algebra: LU with partial pivoting and a Jacobi symmetric eigensolver.

use std::ops::{Index, IndexMut};

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Failed factorization; `column` is the elimination step with no usable pivot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Singular {
    pub column: usize,
}

/// LU factors with row permutation, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    /// Factorizes a square matrix. Pivots smaller than `tiny * max|A|` count as singular.
    pub fn factor(mut a: Matrix<T>, tiny: T) -> Result<Self, Singular> {
        let n = a.rows;
        assert_eq!(n, a.cols, "LU needs a square matrix");
        let scale = a.data.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let threshold = tiny * scale.max(T::min_positive_value());
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmax > threshold) {
                return Err(Singular { column: k });
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                if f == T::zero() {
                    continue;
                }
                a[(i, k)] = f;
                let (upper, lower) = a.data.split_at_mut(i * n);
                let krow = &upper[k * n..k * n + n];
                let irow = &mut lower[..n];
                for j in k + 1..n {
                    irow[j] -= f * krow[j];
                }
            }
        }
        Ok(Lu { lu: a, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let mut s = x[i];
            for j in 0..i {
                s -= row[j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut s = x[i];
            for j in i + 1..n {
                s -= row[j] * x[j];
            }
            x[i] = s / row[i];
        }
        x
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve<T: Real>(a: Matrix<T>, b: &[T]) -> Result<Vec<T>, Singular> {
    Ok(Lu::factor(a, T::epsilon())?.solve(b))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in non-increasing order and the matching unit
/// eigenvectors as the columns of the returned matrix.
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.rows;
    assert_eq!(n, a.cols);
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= T::epsilon() * T::epsilon() * diag.max(T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, c)] = v[(r, src)];
        }
    }
    (values, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_permuted_system() {
        let a = Matrix::from_rows(&[
            vec![0.0f64, 2.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![3.0, 0.0, 1.0],
        ]);
        let x_true = [1.0, -2.0, 0.5];
        let b = a.mul_vec(&x_true);
        let x = solve(a, &b).unwrap();
        for (u, v) in x.iter().zip(x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_reports_singular_column() {
        let a = Matrix::from_rows(&[vec![1.0f64, 2.0], vec![2.0, 4.0]]);
        assert_eq!(solve(a, &[1.0, 1.0]).unwrap_err(), Singular { column: 1 });
    }

    #[test]
    fn jacobi_matches_closed_form_2x2() {
        let a = Matrix::from_rows(&[vec![2.0f64, 1.0], vec![1.0, 2.0]]);
        let (vals, vecs) = symmetric_eigen(&a);
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[(0, 0)].abs() - r).abs() < 1e-12);
        assert!((vecs[(0, 0)] - vecs[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, -2.0, 0.5],
            vec![1.0, 3.0, 0.0, 1.0],
            vec![-2.0, 0.0, 5.0, -1.0],
            vec![0.5, 1.0, -1.0, 2.0],
        ]);
        let (vals, v) = symmetric_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..4 {
            for j in 0..4 {
                let r: f64 = (0..4).map(|k| v[(i, k)] * vals[k] * v[(j, k)]).sum();
                assert!((r - a[(i, j)]).abs() < 1e-10);
            }
        }
    }
}
