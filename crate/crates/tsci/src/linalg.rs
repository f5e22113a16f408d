//! Rank detection and orthonormal column bases.
//!
//! Rank is measured on singular values with a relative tolerance of
//! `1e-10 * sigma_max`; projectors are built from column-pivoted QR rather
//! than normal equations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Relative tolerance shared by rank detection and pivoted QR truncation.
pub const RANK_REL_TOL: f64 = 1e-10;

pub(crate) fn to_na(a: &ArrayView2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Numerical rank of `a` from its singular values.
pub fn svd_rank(a: &ArrayView2<f64>) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    let sv = to_na(a).svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL_TOL * smax).count()
}

/// Orthonormal basis of the column span of `a`, via column-pivoted QR.
///
/// Returns `Q` with `rank` orthonormal columns; `rank` is decided on the
/// diagonal of the pivoted `R` factor at [`RANK_REL_TOL`]. An input with zero
/// columns yields a `n x 0` basis.
pub fn orthonormal_basis(a: &ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    if a.ncols() == 0 {
        return Array2::zeros((n, 0));
    }
    let qr = to_na(a).col_piv_qr();
    let q = qr.q();
    let r = qr.r();
    let kmax = r.nrows().min(r.ncols());
    let r00 = r[(0, 0)].abs();
    if r00 <= 0.0 {
        return Array2::zeros((n, 0));
    }
    let rank = (0..kmax)
        .take_while(|&i| r[(i, i)].abs() > RANK_REL_TOL * r00)
        .count();
    Array2::from_shape_fn((n, rank), |(i, j)| q[(i, j)])
}

/// Orthogonal projector onto the complement of a column span.
///
/// Applies `v - Q (Qᵀ v)` without materializing the `n x n` matrix.
#[derive(Debug, Clone)]
pub struct ResidualProjector {
    q: Array2<f64>,
    n: usize,
}

impl ResidualProjector {
    /// Build the annihilator of `span(a)`; `a` may have zero columns.
    pub fn new(a: &ArrayView2<f64>) -> Self {
        let q = orthonormal_basis(a);
        Self { n: a.nrows(), q }
    }

    /// Number of rows the projector acts on.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Rank of the annihilated span.
    pub fn span_rank(&self) -> usize {
        self.q.ncols()
    }

    /// Trace of the projector, `n - rank`.
    pub fn trace(&self) -> f64 {
        (self.n - self.q.ncols()) as f64
    }

    pub fn apply(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        if self.q.ncols() == 0 {
            return v.to_owned();
        }
        let c = self.q.t().dot(v);
        v - &self.q.dot(&c)
    }

    pub fn apply_mat(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        if self.q.ncols() == 0 {
            return m.to_owned();
        }
        let c = self.q.t().dot(m);
        m - &self.q.dot(&c)
    }

    /// Orthonormal basis of the annihilated span.
    pub fn span_basis(&self) -> &Array2<f64> {
        &self.q
    }

    /// Dense `n x n` projector matrix; intended for diagnostics and tests.
    pub fn materialize(&self) -> Array2<f64> {
        let mut p = Array2::eye(self.n);
        if self.q.ncols() > 0 {
            p -= &self.q.dot(&self.q.t());
        }
        p
    }
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn least_squares(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let na_a = to_na(a);
    let na_b = nalgebra::DVector::from_fn(b.len(), |i, _| b[i]);
    let sol = na_a
        .svd(true, true)
        .solve(&na_b, RANK_REL_TOL)
        .expect("SVD least squares");
    Array1::from_iter(sol.iter().cloned())
}

/// Diagonal of `(AᵀA)⁻¹`, for classical OLS/TSLS standard errors.
pub fn gram_inverse_diag(a: &ArrayView2<f64>) -> Option<Array1<f64>> {
    let na_a = to_na(a);
    let gram = na_a.transpose() * &na_a;
    let inv = gram.try_inverse()?;
    Some(Array1::from_shape_fn(a.ncols(), |i| inv[(i, i)]))
}
