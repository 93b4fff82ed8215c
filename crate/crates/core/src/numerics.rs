//! Dense real linear algebra: row-major `f64` matrices, products, norms,
//! and a one-sided Jacobi SVD.
//!
//! All computation is in 64-bit floats. The SVD is deterministic: identical
//! input bits always produce identical factors.

use crate::error::{Error, Result};

/// Maximum number of Jacobi sweeps before the SVD reports non-convergence.
pub const SVD_MAX_SWEEPS: usize = 60;
/// A column pair is left alone once the relative off-diagonal coupling drops
/// below this threshold.
pub const SVD_ROTATION_TOL: f64 = 1e-12;

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix. Dimensions must be positive.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch {
                context: format!("matrix dimensions must be positive, got {rows}x{cols}"),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: format!("data length {} does not match {rows}x{cols}", data.len()),
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix data".to_string(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(rows: usize, cols: usize, mut f: F) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Matrix, f: F, op: &str) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "{op}: {}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Dense product A * B.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            context: format!("matmul: {}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (j, &bkj) in b_row.iter().enumerate() {
                out_row[j] += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Thin SVD factors: `A = U * diag(S) * V^T` with `r = min(rows, cols)`.
///
/// Invariants (checked by the test suite, guaranteed by [`svd`]):
/// singular values non-negative and descending; U and V have orthonormal
/// columns to 1e-10; the product reconstructs A to 1e-10 relative.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left singular vectors, `rows x r`.
    pub u: Matrix,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// Right singular vectors, `cols x r`.
    pub v: Matrix,
}

/// Thin SVD via one-sided Jacobi rotations.
///
/// Deterministic: a fixed cyclic sweep order and a fixed tie-stable sort of
/// the singular values mean identical inputs give bitwise-identical factors.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    if !a.is_finite() {
        return Err(Error::NonFinite {
            context: "svd input".to_string(),
        });
    }
    if a.rows >= a.cols {
        jacobi_tall(a)
    } else {
        // A wide: factor A^T (tall) and swap the roles of U and V.
        let f = jacobi_tall(&a.transpose())?;
        Ok(SvdFactors {
            u: f.v,
            s: f.s,
            v: f.u,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

/// One-sided Jacobi on a tall (rows >= cols) matrix.
fn jacobi_tall(a: &Matrix) -> Result<SvdFactors> {
    let m = a.rows;
    let n = a.cols;
    // Work on contiguous columns.
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let app = dot(&g[p], &g[p]);
                let aqq = dot(&g[q], &g[q]);
                let apq = dot(&g[p], &g[q]);
                if apq == 0.0 || apq * apq <= SVD_ROTATION_TOL * SVD_ROTATION_TOL * app * aqq {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut g, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: SVD_MAX_SWEEPS,
        });
    }

    // Singular values are the column norms of the rotated matrix.
    let raw_sigma: Vec<f64> = g.iter().map(|col| dot(col, col).sqrt()).collect();

    // Descending stable order; ties keep their prior relative position.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw_sigma[j].partial_cmp(&raw_sigma[i]).unwrap());

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut zero_slots = Vec::new();
    for (slot, &idx) in order.iter().enumerate() {
        let sigma = raw_sigma[idx];
        s.push(sigma);
        v_cols.push(v[idx].clone());
        if sigma > f64::MIN_POSITIVE {
            u_cols.push(g[idx].iter().map(|x| x / sigma).collect());
        } else {
            // Placeholder; filled in below with an orthonormal completion.
            u_cols.push(vec![0.0; m]);
            zero_slots.push(slot);
        }
    }

    if !zero_slots.is_empty() {
        complete_orthonormal(&mut u_cols, &zero_slots, m);
    }

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let v_out = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Ok(SvdFactors { u, s, v: v_out })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let len = cols[p].len();
    for i in 0..len {
        let xp = cols[p][i];
        let xq = cols[q][i];
        cols[p][i] = c * xp - s * xq;
        cols[q][i] = s * xp + c * xq;
    }
}

/// Replace the columns listed in `zero_slots` with unit vectors orthogonal
/// to every other column. Deterministic: for each slot the standard basis
/// vector with the largest residual is chosen, lowest index first on ties.
fn complete_orthonormal(u_cols: &mut [Vec<f64>], zero_slots: &[usize], m: usize) {
    let established: Vec<usize> = (0..u_cols.len())
        .filter(|j| !zero_slots.contains(j))
        .collect();
    let mut filled: Vec<usize> = established;
    // load[i] = sum over filled columns of the squared i-th entry; the
    // residual of e_i against the current basis has norm^2 = 1 - load[i].
    let mut load = vec![0.0; m];
    for &j in &filled {
        for (i, &x) in u_cols[j].iter().enumerate() {
            load[i] += x * x;
        }
    }
    for &slot in zero_slots {
        let mut best = 0;
        let mut best_residual = f64::NEG_INFINITY;
        for (i, &l) in load.iter().enumerate() {
            let r = 1.0 - l;
            if r > best_residual {
                best_residual = r;
                best = i;
            }
        }
        let mut cand = vec![0.0; m];
        cand[best] = 1.0;
        // Two Gram-Schmidt passes keep orthogonality at machine precision.
        for _ in 0..2 {
            for &j in &filled {
                let proj = dot(&cand, &u_cols[j]);
                for (x, &u) in cand.iter_mut().zip(u_cols[j].iter()) {
                    *x -= proj * u;
                }
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        for x in cand.iter_mut() {
            *x /= norm;
        }
        for (i, &x) in cand.iter().enumerate() {
            load[i] += x * x;
        }
        u_cols[slot] = cand;
        filled.push(slot);
    }
}
