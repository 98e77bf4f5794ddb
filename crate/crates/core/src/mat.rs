//! Small dense matrices over f64, row-major.
//!
//! Everything in this crate lives at d ≤ ~16 states, so moment matrices top
//! out around 256×256. At that size plain textbook routines (Cholesky,
//! cyclic Jacobi) are fast, deterministic, and easy to audit, which is what
//! the verification suites need.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("matrix must have at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::validation("ragged rows in matrix literal"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Mat { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row-major flattening; `vec(T)` in the operator algebra.
    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// rowᵀ · M for a row vector, returning a row vector.
    pub fn vecmul_left(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "vecmul_left dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &a) in v.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out.iter_mut().zip(self.row(i)) {
                *o += a * b;
            }
        }
        out
    }

    /// M · v for a column vector.
    pub fn vecmul_right(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "vecmul_right dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// self += w · v vᵀ. Operator flattenings are often mostly zero
    /// (anchor-led sequences kill whole rows), so only the nonzero support
    /// is touched.
    pub fn add_scaled_outer(&mut self, w: f64, v: &[f64]) {
        assert_eq!(self.rows, v.len());
        assert_eq!(self.cols, v.len());
        if w == 0.0 {
            return;
        }
        let nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
        for &i in &nz {
            let c = w * v[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for &j in &nz {
                row[j] += c * v[j];
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Largest |A(i,j) − A(j,i)|.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// (A + Aᵀ)/2; used to clean up round-off before eigen work.
    pub fn symmetrized(&self) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Cholesky factorization (SPD solves and inverses)
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    n: usize,
    l: Vec<f64>, // row-major lower triangle, full square storage
}

impl Cholesky {
    /// Factor A = L Lᵀ. Fails if a pivot is not strictly positive, which for
    /// a symmetric PSD input means the matrix is numerically singular.
    pub fn new(a: &Mat) -> Option<Cholesky> {
        assert_eq!(a.rows(), a.cols());
        let n = a.rows();
        let mut l = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        // forward: L y = b
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        // backward: Lᵀ x = y
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// A⁻¹, column by column, symmetrized to kill round-off drift.
    pub fn inverse(&self) -> Mat {
        let n = self.n;
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv.symmetrized()
    }
}

// ---------------------------------------------------------------------------
// Cyclic Jacobi eigenvalues for symmetric matrices
// ---------------------------------------------------------------------------

/// All eigenvalues of a symmetric matrix by the cyclic Jacobi iteration,
/// swept until the off-diagonal mass is below `REL_TOL` relative to the
/// Frobenius norm (or exactly zero).
///
/// Returns eigenvalues in ascending order.
pub fn jacobi_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    const REL_TOL: f64 = 1e-14;
    const MAX_SWEEPS: usize = 64;

    if a.rows() != a.cols() {
        return Err(Error::validation("jacobi_eigenvalues requires a square matrix"));
    }
    let n = a.rows();
    let mut m = a.symmetrized();
    let scale = m.frobenius_norm();
    if scale == 0.0 || n == 1 {
        let mut eig: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        return Ok(eig);
    }

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j).powi(2);
            }
        }
        if (2.0 * off).sqrt() <= REL_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                // rotation angle that zeroes (p, q)
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // apply rotation to rows/cols p and q
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
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_and_vecmul_agree() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Mat::from_rows(&[vec![0.5, 1.0], vec![-1.0, 2.0]]).unwrap();
        let ab = a.matmul(&b);
        assert_eq!(ab.row(0), &[-1.5, 5.0]);
        assert_eq!(ab.row(1), &[-2.5, 11.0]);
        let v = a.vecmul_left(&[1.0, 1.0]);
        assert_eq!(v, vec![4.0, 6.0]);
        let w = a.vecmul_right(&[1.0, 1.0]);
        assert_eq!(w, vec![3.0, 7.0]);
    }

    #[test]
    fn cholesky_solves_and_inverts() {
        // SPD matrix built as G Gᵀ + I
        let g = Mat::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 1.0, -1.0],
            vec![3.0, 0.5, 2.0],
        ])
        .unwrap();
        let a = g.matmul(&g.transpose()).add(&Mat::identity(3));
        let ch = Cholesky::new(&a).expect("SPD");
        let b = vec![1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        let back = a.vecmul_right(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!(close(*u, *v, 1e-12), "{u} vs {v}");
        }
        let inv = ch.inverse();
        let prod = a.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(close(prod.get(i, j), want, 1e-12));
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap(); // eigenvalues 3, -1
        assert!(Cholesky::new(&a).is_none());
    }

    #[test]
    fn jacobi_diagonal_matrix() {
        let a = Mat::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, -7.0, 0.0],
            vec![0.0, 0.0, 0.25],
        ])
        .unwrap();
        let eig = jacobi_eigenvalues(&a).unwrap();
        assert_eq!(eig, vec![-7.0, 0.25, 3.0]);
    }

    #[test]
    fn jacobi_known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = jacobi_eigenvalues(&a).unwrap();
        assert!(close(eig[0], 1.0, 1e-12));
        assert!(close(eig[1], 3.0, 1e-12));
    }

    #[test]
    fn jacobi_matches_nalgebra_on_random_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 16;
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.gen_range(-1.0..1.0);
                    a.set(i, j, v);
                    a.set(j, i, v);
                }
            }
            let mine = jacobi_eigenvalues(&a).unwrap();
            let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a.get(i, j));
            let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().cloned().collect();
            theirs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (m, t) in mine.iter().zip(&theirs) {
                assert!(close(*m, *t, 1e-8), "{m} vs {t}");
            }
        }
    }
}
