use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense row-major matrix. Rows are the unit of work almost everywhere
/// (one row per observation), so rows are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "RowMatrix::from_vec: size mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.cols);
        for row in self.rows_iter() {
            for (a, &v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        m / self.rows as f64
    }

    /// `n^{-1} sum_i row_i row_i^T`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let c = self.cols;
        let mut s = DMatrix::zeros(c, c);
        for row in self.rows_iter() {
            for a in 0..c {
                for b in a..c {
                    s[(a, b)] += row[a] * row[b];
                }
            }
        }
        symmetrize_upper(&mut s);
        s / self.rows as f64
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Stack of `n` row-major `r x p` blocks, one per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStack {
    n: usize,
    r: usize,
    p: usize,
    data: Vec<f64>,
}

impl BlockStack {
    pub fn zeros(n: usize, r: usize, p: usize) -> Self {
        Self {
            n,
            r,
            p,
            data: vec![0.0; n * r * p],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.r, self.p)
    }

    #[inline]
    pub fn block(&self, i: usize) -> &[f64] {
        let sz = self.r * self.p;
        &self.data[i * sz..(i + 1) * sz]
    }

    #[inline]
    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let sz = self.r * self.p;
        &mut self.data[i * sz..(i + 1) * sz]
    }

    pub fn matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r, self.p, self.block(i))
    }

    pub fn mean(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.r, self.p);
        for i in 0..self.n {
            let b = self.block(i);
            for a in 0..self.r {
                for c in 0..self.p {
                    m[(a, c)] += b[a * self.p + c];
                }
            }
        }
        m / self.n as f64
    }
}

pub(crate) fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::Conditioning(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solve `m x = b` for symmetric positive (semi)definite `m`, adding a
/// small ridge if the plain Cholesky factorisation fails.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = nalgebra::Cholesky::new(m.clone()) {
        return Some(ch.solve(b));
    }
    let scale = (m.trace().abs() / m.nrows().max(1) as f64).max(f64::MIN_POSITIVE);
    let mut ridge = 1e-12 * scale;
    for _ in 0..8 {
        let mut mm = m.clone();
        for k in 0..mm.nrows() {
            mm[(k, k)] += ridge;
        }
        if let Some(ch) = nalgebra::Cholesky::new(mm) {
            return Some(ch.solve(b));
        }
        ridge *= 100.0;
    }
    None
}

/// Symmetric square root with negative eigenvalues clipped to zero.
/// Returns the root and the number of clipped eigenvalues.
pub fn sym_sqrt_clipped(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = symmetrize(m).symmetric_eigen();
    let mut clipped = 0;
    let roots = eig.eigenvalues.map(|l| {
        if l < 0.0 {
            clipped += 1;
            0.0
        } else {
            l.sqrt()
        }
    });
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    (symmetrize(&root), clipped)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (s, clipped) = sym_sqrt_clipped(&m);
        assert_eq!(clipped, 0);
        assert_relative_eq!(&s * &s, m, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_clips_negative_directions() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        let (s, clipped) = sym_sqrt_clipped(&m);
        assert_eq!(clipped, 1);
        assert_relative_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn second_moment_matches_definition() {
        let g = RowMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]);
        let s = g.second_moment();
        assert_relative_eq!(s[(0, 0)], 1.0);
        assert_relative_eq!(s[(0, 1)], (2.0 - 0.5) / 2.0);
        assert_relative_eq!(s[(1, 1)], (4.0 + 0.25) / 2.0);
    }
}
