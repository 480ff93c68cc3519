//! Small dense helpers. State dimensions here are 1 to a handful, so plain
//! `Vec<f64>` storage and O(n³) routines are the right size.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix data has {len} entries, which is not a perfect square")]
    NotSquare { len: usize },
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
}

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean distance between two points of equal dimension.
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, v) in values.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from a row-major list whose length is a perfect square.
    pub fn from_row_major(data: Vec<f64>) -> Result<Self, LinalgError> {
        let n = (data.len() as f64).sqrt().round() as usize;
        if n == 0 || n * n != data.len() {
            return Err(LinalgError::NotSquare { len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * self.n..(i + 1) * self.n], x);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[i] * dot(&self.data[i * n..(i + 1) * n], x);
        }
        acc
    }

    /// Checks `|a_ij - a_ji| <= tol * max(1, max|a|)` for every pair.
    pub fn check_symmetric(&self, tol: f64) -> Result<(), LinalgError> {
        let scale = self.data.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let gap = (self.get(i, j) - self.get(j, i)).abs();
                if gap > tol * scale {
                    return Err(LinalgError::NotSymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Eigen-decomposition `A = V diag(values) Vᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl SymEigen {
    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.vectors.dim())
            .map(|i| self.vectors.get(i, j))
            .collect()
    }
}

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Each rotation annihilates one off-diagonal pair; sweeps repeat until the
/// off-diagonal Frobenius mass falls below `JACOBI_TOL` relative to the
/// whole matrix, or `JACOBI_MAX_SWEEPS` is reached.
pub fn jacobi_eigen(a: &Matrix) -> Result<SymEigen, LinalgError> {
    a.check_symmetric(JACOBI_TOL)?;
    let n = a.dim();
    let mut m = a.clone();
    // work on the exactly symmetrised copy
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, avg);
            m.set(j, i, avg);
        }
    }
    let mut v = Matrix::identity(n);
    let total = m.frobenius();
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&m);
        if off <= JACOBI_TOL * total || off == 0.0 {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let tau = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v.get(row, src));
        }
    }
    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m.get(i, j) * m.get(i, j);
            }
        }
    }
    acc.sqrt()
}

/// Spectral norm `‖A‖₂ = sqrt(λ_max(AᵀA))`.
pub fn spectral_norm(a: &Matrix) -> Result<f64, LinalgError> {
    let ata = a.transpose().matmul(a);
    Ok(jacobi_eigen(&ata)?.max().max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_square_data() {
        assert_eq!(
            Matrix::from_row_major(vec![1.0, 2.0, 3.0]),
            Err(LinalgError::NotSquare { len: 3 })
        );
    }

    #[test]
    fn jacobi_on_2x2_closed_form() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = Matrix::from_row_major(vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let e = jacobi_eigen(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
        let v = e.vector(1);
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-14);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = Matrix::from_row_major(vec![
            4.0, 1.0, -2.0, 0.5, //
            1.0, 3.0, 0.0, 1.0, //
            -2.0, 0.0, 5.0, -1.0, //
            0.5, 1.0, -1.0, 2.0,
        ])
        .unwrap();
        let e = jacobi_eigen(&a).unwrap();
        let d = Matrix::diag(&e.values);
        let back = e.vectors.matmul(&d).matmul(&e.vectors.transpose());
        for (x, y) in back.as_row_major().iter().zip(a.as_row_major()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = Matrix::from_row_major(vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            jacobi_eigen(&a),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Matrix::diag(&[-3.0, 2.0]);
        assert!((spectral_norm(&a).unwrap() - 3.0).abs() < 1e-14);
    }
}
