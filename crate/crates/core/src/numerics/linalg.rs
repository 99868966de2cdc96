//! Small dense linear algebra: row-major matrices, Cholesky solves with
//! jitter escalation, and the normal-equations left inverse.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter levels tried (scaled by `trace / rows`) when a plain
/// Cholesky factorization fails.
pub const JITTER_LEVELS: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Relative symmetry tolerance accepted by [`cholesky_solve`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Minimum `lambda_min / lambda_max` accepted by [`pseudo_left_inverse`].
pub const RANK_RATIO_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Wraps data produced by finite arithmetic on finite inputs.
    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dims("matrix data", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims("matrix row", cols, bad.len()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::dims("matvec", self.cols, x.len()));
        }
        Ok(Vector::from_vec_unchecked(
            (0..self.rows).map(|r| dot(self.row(r), x)).collect(),
        ))
    }

    /// `A^T x`
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.rows {
            return Err(Error::dims("transposed matvec", self.rows, x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, xr) in x.iter().enumerate() {
            axpy(*xr, self.row(r), &mut out);
        }
        Ok(Vector::from_vec_unchecked(out))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dims("matmul", self.cols, other.rows));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, a) in self.row(r).iter().enumerate() {
                if *a != 0.0 {
                    axpy(*a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `A^T B`
    pub fn tr_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dims("transposed matmul", self.rows, other.rows));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, a) in self.row(k).iter().enumerate() {
                if *a != 0.0 {
                    axpy(*a, b_row, out.row_mut(i));
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dims("matrix add", self.data.len(), other.data.len()));
        }
        axpy(1.0, &other.data, &mut self.data);
        Ok(())
    }

    /// Replaces `A` with `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs().max(f64::MIN_POSITIVE);
        let n = self.rows;
        (0..n).all(|i| ((i + 1)..n).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes a symmetric matrix, escalating diagonal jitter through
    /// [`JITTER_LEVELS`] if the plain factorization breaks down.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("cholesky (square)", a.rows(), a.cols()));
        }
        if !a.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::NotSpd);
        }
        if let Some(l) = factor_plain(a, 0.0) {
            return Ok(Self {
                n: a.rows(),
                l,
                jitter: 0.0,
            });
        }
        let scale = a.trace() / a.rows() as f64;
        for level in JITTER_LEVELS {
            let delta = level * scale;
            if delta <= 0.0 {
                break;
            }
            if let Some(l) = factor_plain(a, delta) {
                return Ok(Self {
                    n: a.rows(),
                    l,
                    jitter: delta,
                });
            }
        }
        Err(Error::NotSpd)
    }

    /// Diagonal jitter that was needed for the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `trace(A^{-1}) = ||L^{-1}||_F^2`
    pub fn inverse_trace(&self) -> f64 {
        let n = self.n;
        let l = &self.l;
        let mut total = 0.0;
        let mut y = vec![0.0; n];
        for c in 0..n {
            y.iter_mut().for_each(|v| *v = 0.0);
            for i in c..n {
                let rhs = if i == c { 1.0 } else { 0.0 };
                let s = dot(&l[i * n + c..i * n + i], &y[c..i]);
                y[i] = (rhs - s) / l[i * n + i];
            }
            total += y[c..].iter().map(|v| v * v).sum::<f64>();
        }
        total
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vector> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::dims("cholesky solve", n, b.len()));
        }
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&l[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        Ok(Vector::from_vec_unchecked(y))
    }
}

fn factor_plain(a: &Matrix, delta: f64) -> Option<Vec<f64>> {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[(j, j)] + delta;
        d -= dot(&l[j * n..j * n + j], &l[j * n..j * n + j]);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vector> {
    if a.rows() != b.len() {
        return Err(Error::dims("cholesky_solve rhs", a.rows(), b.len()));
    }
    Cholesky::factor(a)?.solve(b)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= 1e-30 * m.max_abs().powi(2).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig = m.diagonal();
    eig.sort_by(f64::total_cmp);
    eig
}

/// `lambda_min / lambda_max` of a symmetric positive semidefinite matrix
/// (0 when the largest eigenvalue is not positive).
pub fn eigenvalue_ratio(a: &Matrix) -> f64 {
    let eig = symmetric_eigenvalues(a);
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

/// Left inverse `(A^T A)^{-1} A^T` of a tall full-column-rank matrix.
pub fn pseudo_left_inverse(a: &Matrix) -> Result<Matrix> {
    if a.rows() < a.cols() {
        return Err(Error::dims("left inverse (rows >= cols)", a.cols(), a.rows()));
    }
    let mut gram = a.tr_matmul(a)?;
    gram.symmetrize();
    let ratio = eigenvalue_ratio(&gram);
    if !(ratio > RANK_RATIO_TOL) {
        return Err(Error::RankDeficient { ratio });
    }
    let chol = Cholesky::factor(&gram)?;
    let at = a.transpose();
    let mut out = Matrix::zeros(a.cols(), a.rows());
    for c in 0..a.rows() {
        let x = chol.solve(&at.column(c))?;
        for r in 0..a.cols() {
            out[(r, c)] = x[r];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_trace_of_diagonal() {
        let c = Cholesky::factor(&Matrix::from_diagonal(&[2.0, 4.0, 0.5])).unwrap();
        assert!((c.inverse_trace() - 2.75).abs() < 1e-14);
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        assert!((Cholesky::factor(&a).unwrap().inverse_trace() - 7.0 / 11.0).abs() < 1e-14);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_row_major(rows, cols, data).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let b = random_matrix(rng, n, n);
        let mut a = b.matmul(&b.transpose()).unwrap();
        a.add_assign(&Matrix::identity(n)).unwrap();
        a.symmetrize();
        a
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let x = cholesky_solve(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
        let x = cholesky_solve(&Matrix::from_diagonal(&[2.0, 4.0]), &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let n = 1 + trial % 20;
            let a = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = cholesky_solve(&a, &b).unwrap();
            let r = sub(&a.matvec(&x).unwrap(), &b);
            assert!(norm(&r) <= 1e-8 * (1.0 + norm(&b)), "trial {trial}");
        }
    }

    #[test]
    fn cholesky_jitter_rescues_semidefinite() {
        // rank-1 PSD matrix: plain factorization hits a zero pivot
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let chol = Cholesky::factor(&a).unwrap();
        assert!(chol.jitter() > 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_bad_dims() {
        let a = Matrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(cholesky_solve(&a, &[1.0, 1.0]), Err(Error::NotSpd)));
        assert!(matches!(
            cholesky_solve(&Matrix::identity(2), &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn left_inverse_examples() {
        let li = pseudo_left_inverse(&Matrix::identity(2)).unwrap();
        assert_eq!(li, Matrix::identity(2));

        let col = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let li = pseudo_left_inverse(&col).unwrap();
        assert_eq!((li.rows(), li.cols()), (1, 2));
        assert!((li[(0, 0)] - 0.5).abs() < 1e-15 && (li[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn left_inverse_random_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_matrix(&mut rng, 6, 2);
            let li = pseudo_left_inverse(&a).unwrap();
            let mut prod = li.matmul(&a).unwrap();
            prod.add_assign(&{
                let mut m = Matrix::identity(2);
                m.scale(-1.0);
                m
            })
            .unwrap();
            assert!(prod.norm_inf() <= 1e-8);
        }
    }

    #[test]
    fn left_inverse_rank_deficient() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(matches!(
            pseudo_left_inverse(&a),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn jacobi_eigenvalues_match_known_spectrum() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eigenvalues(&a);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_row_major(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(Matrix::from_row_major(2, 2, vec![0.0; 3]).is_err());
    }
}
