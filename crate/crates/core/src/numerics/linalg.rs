//! Dense row-major matrices: Cholesky and Jacobi eigen-decomposition for the
//! small symmetric matrices used by the copula.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue guaranteed by [`nearest_correlation_repair`].
pub const MIN_EIGENVALUE: f64 = 1e-8;
const CLIP_FLOOR: f64 = 1.1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn require_square(&self, op: &'static str) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::domain(
                op,
                format!("expected a square matrix, got {}x{}", self.rows, self.cols),
            ))
        }
    }

    /// Lower-triangular `L` with `L Lᵀ = self`. Only the lower triangle is read.
    pub fn cholesky(&self) -> Result<Matrix> {
        self.require_square("cholesky_factor")?;
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Decomposition { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Eigenvalues (ascending) and column eigenvectors of a symmetric matrix,
    /// by cyclic Jacobi rotations.
    pub fn symmetric_eigen(&self) -> Result<(Vec<f64>, Matrix)> {
        self.require_square("symmetric_eigen")?;
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Matrix::identity(n);
        let scale = self
            .data
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
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
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Matrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            for r in 0..n {
                vectors[(r, col)] = v[(r, src)];
            }
        }
        Ok((values, vectors))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn cholesky_factor(m: &Matrix) -> Result<Matrix> {
    m.cholesky()
}

/// Project a symmetric unit-diagonal matrix onto the positive-definite
/// correlation matrices by clipping eigenvalues and rescaling the diagonal.
///
/// Matrices whose smallest eigenvalue is already at least [`MIN_EIGENVALUE`]
/// are returned unchanged.
pub fn nearest_correlation_repair(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let mut current = m.clone();
    for _ in 0..100 {
        let (values, vectors) = current.symmetric_eigen()?;
        if values.first().is_none_or(|&v| v >= MIN_EIGENVALUE) {
            return Ok(current);
        }
        let mut rebuilt = Matrix::zeros(n, n);
        for (k, &lambda) in values.iter().enumerate() {
            let lambda = lambda.max(CLIP_FLOOR);
            for i in 0..n {
                for j in 0..n {
                    rebuilt[(i, j)] += lambda * vectors[(i, k)] * vectors[(j, k)];
                }
            }
        }
        let scale: Vec<f64> = (0..n).map(|i| rebuilt[(i, i)].sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                rebuilt[(i, j)] = if i == j {
                    1.0
                } else {
                    rebuilt[(i, j)] / (scale[i] * scale[j])
                };
            }
        }
        for i in 0..n {
            for j in 0..i {
                let avg = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]);
                rebuilt[(i, j)] = avg;
                rebuilt[(j, i)] = avg;
            }
        }
        current = rebuilt;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factors_to_identity() {
        let i = Matrix::identity(4);
        assert_eq!(i.cholesky().unwrap(), i);
        assert_eq!(nearest_correlation_repair(&i).unwrap(), i);
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let l = m.cholesky().unwrap();
        assert_eq!(l[(0, 0)], 1.0);
        assert_eq!(l[(1, 0)], 0.5);
        assert!((l[(1, 1)] - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match m.cholesky() {
            Err(Error::Decomposition { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Matrix::zeros(2, 3).cholesky().is_err());
    }

    #[test]
    fn eigen_reconstructs() {
        let m = Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, -0.2], vec![0.5, -0.2, 2.0]]).unwrap();
        let (vals, vecs) = m.symmetric_eigen().unwrap();
        let mut lam = Matrix::zeros(3, 3);
        for i in 0..3 {
            lam[(i, i)] = vals[i];
        }
        let back = vecs.matmul(&lam).unwrap().matmul(&vecs.transpose()).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }
}
