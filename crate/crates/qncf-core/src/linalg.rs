//! Small dense linear algebra kernels.
//!
//! Everything here is deliberately in-repo: the eigensolver (cyclic Jacobi
//! with rotation thresholds), Gaussian elimination with partial pivoting and
//! the op-counted LU determinant are part of the verification surface, so
//! the harness does not lean on an external solver for them.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix { rows: r, cols: c, data: rows.concat() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

const MAX_JACOBI_SWEEPS: usize = 64;

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Sweeps the strict upper triangle, rotating away each off-diagonal entry,
/// until the off-diagonal Frobenius mass falls below `tol` relative to the
/// matrix scale. Returns `(eigenvalues, eigenvectors)` with eigenvector `k`
/// in column `k`, in no particular order.
pub fn sym_eigen_jacobi(a: &Matrix, tol: f64) -> Result<(Vec<f64>, Matrix)> {
    if a.rows() != a.cols() {
        return Err(Error::validation("eigensolver requires a square matrix"));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(1.0);

    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m.get(p, q) * m.get(p, q))
            .sum::<f64>()
            .sqrt();
        if off <= tol * scale {
            let eigenvalues = (0..n).map(|i| m.get(i, i)).collect();
            return Ok((eigenvalues, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= f64::EPSILON * scale {
                    continue;
                }
                // Stable rotation from the Numerical Recipes formulation:
                // t = sgn(theta) / (|theta| + sqrt(theta^2 + 1)).
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::Numerical(format!(
        "Jacobi eigensolver did not converge in {MAX_JACOBI_SWEEPS} sweeps"
    )))
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_gauss(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows() != a.cols() || a.rows() != b.len() {
        return Err(Error::validation("solve requires square A and matching b"));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut x: Vec<f64> = b.to_vec();
    let scale = m.max_abs().max(1.0);

    for col in 0..n {
        let (pivot_row, pivot) = ((col..n).map(|r| (r, m.get(r, col).abs())))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot <= 1e-14 * scale {
            return Err(Error::Numerical(format!(
                "singular pivot at column {col} (|pivot| = {pivot:.3e})"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(pivot_row, j));
                m.set(pivot_row, j, tmp);
            }
            x.swap(col, pivot_row);
        }
        for row in (col + 1)..n {
            let f = m.get(row, col) / m.get(col, col);
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                let v = m.get(row, j) - f * m.get(col, j);
                m.set(row, j, v);
            }
            x[row] -= f * x[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for j in (row + 1)..n {
            acc -= m.get(row, j) * x[j];
        }
        x[row] = acc / m.get(row, row);
    }
    Ok(x)
}

/// Determinant by LU with partial pivoting, returning the arithmetic-op
/// tally alongside the value (the independence check asserts O(r^3) cost).
pub fn det_lu_counted(a: &Matrix) -> (f64, u64) {
    assert_eq!(a.rows(), a.cols(), "determinant of a non-square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut det = 1.0;
    let mut ops: u64 = 0;

    for col in 0..n {
        let (pivot_row, pivot) = ((col..n).map(|r| (r, m.get(r, col).abs())))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        ops += (n - col) as u64;
        if pivot == 0.0 {
            return (0.0, ops);
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(pivot_row, j));
                m.set(pivot_row, j, tmp);
            }
            det = -det;
        }
        det *= m.get(col, col);
        ops += 1;
        for row in (col + 1)..n {
            let f = m.get(row, col) / m.get(col, col);
            ops += 1;
            for j in (col + 1)..n {
                let v = m.get(row, j) - f * m.get(col, j);
                m.set(row, j, v);
                ops += 2;
            }
        }
    }
    (det, ops)
}

/// Spectral norm of an arbitrary matrix via the symmetric eigensolver on
/// `MᵀM` (exact enough for the small operators this crate handles).
pub fn spectral_norm(m: &Matrix) -> f64 {
    let gram = m.transpose().matmul(m);
    let (eigs, _) = sym_eigen_jacobi(&gram, 1e-14).expect("Jacobi on MᵀM");
    eigs.iter().fold(0.0f64, |a, &x| a.max(x.max(0.0))).sqrt()
}

/// `‖C⁻¹‖₂` of a symmetric positive definite matrix (1 / smallest
/// eigenvalue). Errors if the matrix is not numerically PD.
pub fn sym_inverse_norm(c: &Matrix) -> Result<f64> {
    let (eigs, _) = sym_eigen_jacobi(c, 1e-14)?;
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(Error::Conditioning(format!(
            "matrix is not positive definite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(1.0 / min)
}

/// Modified Gram–Schmidt with one re-orthogonalization pass. Input columns
/// must be linearly independent to working precision.
pub fn orthonormalize_columns(cols: &mut [Vec<f64>]) -> Result<()> {
    for j in 0..cols.len() {
        for _pass in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (a, b) in tail[0].iter_mut().zip(&head[i]) {
                    *a -= dot * b;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(Error::Numerical(format!(
                "column {j} is dependent on its predecessors (residual norm {norm:.3e})"
            )));
        }
        for x in cols[j].iter_mut() {
            *x /= norm;
        }
    }
    Ok(())
}
