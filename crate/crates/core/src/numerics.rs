//! Small dense linear algebra for the low-dimensional pieces of the pipeline
//! (mixture covariances, Gaussian conditioning, oracle velocities).
//!
//! Everything here is sized for dimensions up to about four. No blocking, no
//! BLAS; the batched network code uses `ndarray` instead.

use std::ops::{Deref, Index};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const MIN_PIVOT: f64 = 1e-14;
const MIN_DET: f64 = 1e-14;

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("vector must have dim >= 1".into()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vector entries"));
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector must have dim >= 1");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for RealVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for RealVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RealVector> for Vec<f64> {
    fn from(v: RealVector) -> Self {
        v.0
    }
}

/// A finite, row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("matrix must be at least 1x1".into()));
        }
        if rows * cols != entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Result<Self> {
        Self::new(rows.len(), C, rows.iter().flatten().copied().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.entries[i * n + i] = *d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &RealMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.entries[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|r| {
                self.entries[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `alpha * self + beta * other`, elementwise.
    pub fn combine(&self, alpha: f64, other: &RealMatrix, beta: f64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.entries[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
pub fn cholesky(m: &RealMatrix) -> Result<RealMatrix> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::InvalidArgument("cholesky needs a symmetric matrix".into()));
    }
    let n = m.rows;
    let mut l = RealMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > MIN_PIVOT) {
            return Err(Error::NonPositiveDefinite { row: j, pivot: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &RealMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() || a.rows != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot solve {}x{} system with rhs of length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    let n = a.rows;
    let mut lu = a.entries.clone();
    let mut x = b.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lu[i * n + col].abs().total_cmp(&lu[j * n + col].abs()))
            .expect("non-empty range");
        if pivot_row != col {
            for c in 0..n {
                lu.swap(col * n + c, pivot_row * n + c);
            }
            x.swap(col, pivot_row);
            det = -det;
        }
        let p = lu[col * n + col];
        det *= p;
        if p == 0.0 {
            return Err(Error::SingularMatrix { det: 0.0 });
        }
        for r in (col + 1)..n {
            let factor = lu[r * n + col] / p;
            if factor != 0.0 {
                for c in col..n {
                    lu[r * n + c] -= factor * lu[col * n + c];
                }
                x[r] -= factor * x[col];
            }
        }
    }
    if !(det.abs() > MIN_DET) {
        return Err(Error::SingularMatrix { det });
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in (r + 1)..n {
            s -= lu[r * n + c] * x[c];
        }
        x[r] = s / lu[r * n + r];
    }
    Ok(x)
}

/// `a⁻¹ m`, column by column.
pub fn solve_matrix(a: &RealMatrix, m: &RealMatrix) -> Result<RealMatrix> {
    let mut out = RealMatrix::zeros(a.rows, m.cols);
    for c in 0..m.cols {
        let col: Vec<f64> = (0..m.rows).map(|r| m.get(r, c)).collect();
        let x = solve_linear(a, &col)?;
        for (r, v) in x.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(m: &RealMatrix) -> Result<(Vec<f64>, RealMatrix)> {
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::InvalidArgument(
            "eigen-decomposition needs a symmetric matrix".into(),
        ));
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = RealMatrix::identity(n);
    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
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
    Ok(((0..n).map(|i| a.get(i, i)).collect(), v))
}

/// Principal square root of a symmetric positive definite matrix.
pub fn spd_sqrt(m: &RealMatrix) -> Result<RealMatrix> {
    let (vals, vecs) = symmetric_eigen(m)?;
    if let Some((row, &pivot)) = vals.iter().enumerate().find(|(_, &l)| !(l > MIN_PIVOT)) {
        return Err(Error::NonPositiveDefinite { row, pivot });
    }
    let n = m.rows;
    let mut out = RealMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..n).map(|k| vecs.get(i, k) * vals[k].sqrt() * vecs.get(j, k)).sum();
            out.set(i, j, s);
        }
    }
    // symmetrize away rotation round-off
    let t = out.transpose();
    Ok(out.combine(0.5, &t, 0.5))
}

/// Spectral norm by power iteration on `mᵀ m`.
pub fn spectral_norm(rows: usize, cols: usize, entries: &[f64], iters: usize) -> f64 {
    let mut x = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..iters {
        let y: Vec<f64> = (0..rows)
            .map(|r| (0..cols).map(|c| entries[r * cols + c] * x[c]).sum())
            .collect();
        let z: Vec<f64> = (0..cols)
            .map(|c| (0..rows).map(|r| entries[r * cols + c] * y[r]).sum())
            .collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma = norm.sqrt();
        x = z.into_iter().map(|v| v / norm).collect();
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reconstruct(l: &RealMatrix) -> RealMatrix {
        l.matmul(&l.transpose()).unwrap()
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let i2 = RealMatrix::identity(2);
        assert_eq!(cholesky(&i2).unwrap(), i2);
        let d = RealMatrix::from_rows(&[[4.0, 0.0], [0.0, 9.0]]).unwrap();
        assert_eq!(
            cholesky(&d).unwrap(),
            RealMatrix::from_rows(&[[2.0, 0.0], [0.0, 3.0]]).unwrap()
        );
    }

    #[test]
    fn cholesky_correlated_reconstructs() {
        let m = RealMatrix::from_rows(&[[1.0, 0.8], [0.8, 1.0]]).unwrap();
        let l = cholesky(&m).unwrap();
        assert_eq!(l.get(0, 1), 0.0);
        assert!(reconstruct(&l).max_abs_diff(&m) < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let m = RealMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&m), Err(Error::NonPositiveDefinite { row: 1, .. })));
        let m = RealMatrix::from_rows(&[[1.0, 0.0], [0.0, 1e-15]]).unwrap();
        assert!(matches!(cholesky(&m), Err(Error::NonPositiveDefinite { .. })));
        let m = RealMatrix::from_rows(&[[1.0, 0.1], [0.2, 1.0]]).unwrap();
        assert!(cholesky(&m).is_err());
    }

    #[test]
    fn solve_examples() {
        let x = solve_linear(&RealMatrix::identity(2), &[5.0, 7.0]).unwrap();
        assert_eq!(x, vec![5.0, 7.0]);
        let a = RealMatrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap();
        assert_eq!(solve_linear(&a, &[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
        let a = RealMatrix::from_rows(&[[1.0, 0.8], [0.8, 1.0]]).unwrap();
        let x = solve_linear(&a, &[1.0, 1.0]).unwrap();
        let r = a.matvec(&x);
        assert!((r[0] - 1.0).abs() < 1e-9 && (r[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solve_singular() {
        let a = RealMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(matches!(
            solve_linear(&a, &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn vector_and_matrix_reject_non_finite() {
        assert!(RealVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(RealVector::new(vec![]).is_err());
        assert!(RealMatrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(RealMatrix::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let m = RealMatrix::from_rows(&[[2.0, 0.3], [0.3, 0.5]]).unwrap();
        let s = spd_sqrt(&m).unwrap();
        assert!(s.matmul(&s).unwrap().max_abs_diff(&m) < 1e-12);
        assert!(s.is_symmetric(0.0));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let s = spectral_norm(2, 2, &[3.0, 0.0, 0.0, -5.0], 200);
        assert!((s - 5.0).abs() < 1e-9);
    }

    fn spd2() -> impl Strategy<Value = RealMatrix> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64, 0.05..2.0f64).prop_map(|(a, b, c, d)| {
            // B Bᵀ + d I is SPD for any B
            let b = RealMatrix::from_rows(&[[a, b], [c, 0.5 * a]]).unwrap();
            b.matmul(&b.transpose())
                .unwrap()
                .combine(1.0, &RealMatrix::identity(2), d)
        })
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs_random_spd(m in spd2()) {
            let l = cholesky(&m).unwrap();
            prop_assert!(reconstruct(&l).max_abs_diff(&m) < 1e-10);
        }

        #[test]
        fn solve_inverts_well_conditioned(
            a in prop::array::uniform4(-2.0..2.0f64),
            x in prop::array::uniform2(-5.0..5.0f64),
        ) {
            // diagonal dominance keeps the condition number well under 1e4
            let m = RealMatrix::from_rows(&[[a[0] + 5.0, a[1]], [a[2], a[3] + 5.0]]).unwrap();
            let b = m.matvec(&x);
            let got = solve_linear(&m, &b).unwrap();
            prop_assert!((got[0] - x[0]).abs() < 1e-8 && (got[1] - x[1]).abs() < 1e-8);
        }
    }
}
