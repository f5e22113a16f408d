//! Basis-approximation first stage: an orthogonal projector onto polynomial
//! instrument features plus the covariate basis. Needs no sample split.

use crate::data::CovariateBasis;
use crate::error::{Result, TsciError};
use crate::linalg::orthonormal_basis;
use crate::weights::{WeightKind, WeightMatrix};
use ndarray::{s, Array2, ArrayView2};

/// Polynomial features of each instrument column up to `degree`, centered and
/// scaled to unit norm. Projectors are invariant to such column rescaling, so
/// the estimator is unchanged while conditioning improves.
fn polynomial_features(z: &ArrayView2<f64>, degree: usize) -> Array2<f64> {
    let n = z.nrows();
    let mut b = Array2::zeros((n, z.ncols() * degree));
    let mut col = 0;
    for j in 0..z.ncols() {
        for deg in 1..=degree {
            let mut c = b.column_mut(col);
            c.iter_mut()
                .zip(z.column(j).iter())
                .for_each(|(dst, &v)| *dst = v.powi(deg as i32));
            let mean = c.sum() / n as f64;
            c.iter_mut().for_each(|v| *v -= mean);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                c.iter_mut().for_each(|v| *v /= norm);
            }
            col += 1;
        }
    }
    b
}

/// Projection smoother onto `span([B | W])` with `B` the polynomial basis of
/// the instruments up to `basis_count`.
pub fn basis_omega(
    z: &ArrayView2<f64>,
    w: &CovariateBasis,
    basis_count: usize,
) -> Result<WeightMatrix> {
    let n = z.nrows();
    if basis_count == 0 {
        return Err(TsciError::Config("basis count must be >= 1".into()));
    }
    if w.w.nrows() != n {
        return Err(TsciError::Dimension(
            "instrument and covariate row counts differ".into(),
        ));
    }
    let total = basis_count * z.ncols() + w.p_w();
    if total >= n {
        return Err(TsciError::Dimension(format!(
            "basis dimension {total} must be smaller than the sample size {n}"
        )));
    }
    let b = polynomial_features(z, basis_count);
    let mut design = Array2::zeros((n, b.ncols() + w.p_w()));
    design.slice_mut(s![.., ..b.ncols()]).assign(&b);
    design.slice_mut(s![.., b.ncols()..]).assign(&w.w);
    let q = orthonormal_basis(&design.view());
    if q.ncols() == 0 {
        return Err(TsciError::DegenerateProjection(
            "basis design has rank zero".into(),
        ));
    }
    Ok(WeightMatrix::projector(WeightKind::Basis, q))
}
