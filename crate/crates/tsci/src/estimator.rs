//! Second-stage point estimators, bias corrections, standard errors, and the
//! baseline estimators used as comparison foils.

use crate::error::{Result, TsciError};
use crate::linalg::{gram_inverse_diag, least_squares, ResidualProjector};
use crate::norm::inv_phi;
use crate::violation::TransformMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionKind {
    Homo,
    Hetero,
    HeteroSeq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeKind {
    Hetero,
    Homo,
}

/// All second-stage outputs for one (split, violation space).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsciFit {
    pub q: usize,
    pub beta_init: f64,
    /// Bias-corrected point estimate.
    pub beta: f64,
    pub correction_kind: CorrectionKind,
    pub se: f64,
    pub se_kind: SeKind,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub alpha: f64,
    pub mu_hat: f64,
    pub trace_m: f64,
    /// `d_A1ᵀ M(V) d_A1`.
    pub denom: f64,
    pub warnings: Vec<String>,
}

impl TsciFit {
    pub fn covers(&self, beta_true: f64) -> bool {
        self.ci_lo <= beta_true && beta_true <= self.ci_hi
    }

    pub fn ci_length(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}

/// `(y_A1ᵀ M d_A1) / (d_A1ᵀ M d_A1)`.
pub fn beta_init(
    y_a1: &ArrayView1<f64>,
    d_a1: &ArrayView1<f64>,
    m: &TransformMatrix,
) -> Result<f64> {
    let denom = m.quad(d_a1, d_a1);
    if denom <= 0.0 {
        return Err(TsciError::WeakIv(format!(
            "non-positive curvature denominator {denom:.3e} at order {}",
            m.order()
        )));
    }
    Ok(m.quad(y_a1, d_a1) / denom)
}

/// Projected residual `P_perp(V, W) [y - d * beta_used]` on the estimation
/// rows.
pub fn residual_eps(
    y_a1: &ArrayView1<f64>,
    d_a1: &ArrayView1<f64>,
    beta_used: f64,
    proj: &ResidualProjector,
) -> Array1<f64> {
    let raw = y_a1 - &(d_a1 * beta_used);
    proj.apply(&raw.view())
}

/// Covariance of the two model errors, estimated from projected residuals
/// with an `n1 - r` degrees-of-freedom correction.
pub fn cov_hat(
    d_a1: &ArrayView1<f64>,
    f_hat: &ArrayView1<f64>,
    y_a1: &ArrayView1<f64>,
    beta_init: f64,
    proj: &ResidualProjector,
    r: usize,
) -> Result<f64> {
    let n1 = d_a1.len();
    if n1 <= r {
        return Err(TsciError::DegenerateProjection(format!(
            "n1={n1} must exceed rank r={r}"
        )));
    }
    let delta_hat = d_a1 - f_hat;
    let eps = residual_eps(y_a1, d_a1, beta_init, proj);
    Ok(delta_hat.dot(&eps) / (n1 - r) as f64)
}

/// Trace-based correction under homoscedastic error correlation.
pub fn beta_corrected_homo(beta_init: f64, cov_hat: f64, trace_m: f64, denom: f64) -> Result<f64> {
    if denom <= 0.0 {
        return Err(TsciError::WeakIv("non-positive denominator".into()));
    }
    Ok(beta_init - cov_hat * trace_m / denom)
}

/// Diagonal correction robust to heteroscedastic error correlation.
pub fn beta_corrected_hetero(
    beta_init: f64,
    m: &TransformMatrix,
    delta_hat: &ArrayView1<f64>,
    eps_hat: &ArrayView1<f64>,
    denom: f64,
) -> Result<f64> {
    if denom <= 0.0 {
        return Err(TsciError::WeakIv("non-positive denominator".into()));
    }
    let correction: f64 = m
        .diag()
        .iter()
        .zip(delta_hat.iter())
        .zip(eps_hat.iter())
        .map(|((mii, de), ep)| mii * de * ep)
        .sum();
    Ok(beta_init - correction / denom)
}

/// Heteroscedasticity-robust standard error
/// `sqrt(sum eps_i² [M d]_i²) / (dᵀ M d)`. Returns the value and whether it
/// degenerated to zero.
pub fn se_hetero(
    eps_hat: &ArrayView1<f64>,
    m: &TransformMatrix,
    d_a1: &ArrayView1<f64>,
    denom: f64,
) -> Result<(f64, bool)> {
    if denom <= 0.0 {
        return Err(TsciError::WeakIv("non-positive denominator".into()));
    }
    let md = m.apply(d_a1);
    let sum: f64 = eps_hat
        .iter()
        .zip(md.iter())
        .map(|(e, v)| e * e * v * v)
        .sum();
    let se = sum.sqrt() / denom;
    Ok((se, se == 0.0))
}

/// Homoscedastic standard error
/// `sigma_eps * sqrt(dᵀ M² d) / (dᵀ M d)` with
/// `sigma_eps² = |eps|² / (dof_n - r)`.
pub fn se_homo(
    eps_norm_sq: f64,
    m: &TransformMatrix,
    d_a1: &ArrayView1<f64>,
    denom: f64,
    dof_n: usize,
    r: usize,
) -> Result<(f64, bool)> {
    if denom <= 0.0 {
        return Err(TsciError::WeakIv("non-positive denominator".into()));
    }
    if dof_n <= r {
        return Err(TsciError::DegenerateProjection(format!(
            "dof n={dof_n} must exceed rank r={r}"
        )));
    }
    let sigma = (eps_norm_sq / (dof_n - r) as f64).sqrt();
    let md = m.apply(d_a1);
    let se = sigma * md.dot(&md).sqrt() / denom;
    Ok((se, se == 0.0))
}

/// Wald interval `beta ± z_{alpha/2} * se`; `alpha = 1` degenerates to a
/// zero-width interval at the point estimate.
pub fn confidence_interval(beta: f64, se: f64, alpha: f64) -> (f64, f64) {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
    let z = inv_phi(1.0 - alpha / 2.0);
    (beta - z * se, beta + z * se)
}

/// Plug-in and estimating-equation baselines computed from the first-stage
/// prediction and the untransformed annihilator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlugEeFit {
    pub beta_plug: f64,
    pub se_plug: f64,
    pub beta_ee: f64,
    /// The estimating-equation denominator `dᵀ P_perp f_hat` came out
    /// negative; the point estimate is still reported.
    pub ee_denominator_negative: bool,
}

pub fn plug_ee_estimators(
    y_a1: &ArrayView1<f64>,
    d_a1: &ArrayView1<f64>,
    f_hat: &ArrayView1<f64>,
    proj: &ResidualProjector,
) -> Result<PlugEeFit> {
    let pf = proj.apply(f_hat);
    let py = proj.apply(y_a1);
    let pd = proj.apply(d_a1);
    let ff = pf.dot(&pf);
    if ff <= 0.0 {
        return Err(TsciError::NumericalDegeneracy(
            "projected first stage has zero norm".into(),
        ));
    }
    let beta_plug = py.dot(&pf) / ff;
    let n1 = y_a1.len() as f64;
    let resid = proj.apply(&(y_a1 - &(d_a1 * beta_plug)).view());
    let se_plug = (resid.dot(&resid) / (n1 * ff)).sqrt();

    let ee_denom = pd.dot(&pf);
    let beta_ee = if ee_denom != 0.0 {
        py.dot(&pf) / ee_denom
    } else {
        f64::NAN
    };
    Ok(PlugEeFit {
        beta_plug,
        se_plug,
        beta_ee,
        ee_denominator_negative: ee_denom < 0.0,
    })
}

/// No-split estimator on the full sample with its homoscedastic standard
/// error (`sigma` divisor `n`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FullFit {
    pub beta: f64,
    pub se: f64,
}

pub fn full_sample_estimator(
    y: &ArrayView1<f64>,
    d: &ArrayView1<f64>,
    m_full: &TransformMatrix,
    proj: &ResidualProjector,
) -> Result<FullFit> {
    let denom = m_full.quad(d, d);
    if denom <= 0.0 {
        return Err(TsciError::WeakIv(
            "non-positive full-sample denominator".into(),
        ));
    }
    let beta = m_full.quad(y, d) / denom;
    let resid = proj.apply(&(y - &(d * beta)).view());
    let sigma = (resid.dot(&resid) / y.len() as f64).sqrt();
    let md = m_full.apply(d);
    let se = sigma * md.dot(&md).sqrt() / denom;
    Ok(FullFit { beta, se })
}

/// Classical two stage least squares of `y` on `(d, x)` with instruments
/// `(z, x)` and homoscedastic standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TslsFit {
    pub beta: f64,
    pub se: f64,
}

pub fn tsls(
    y: &ArrayView1<f64>,
    d: &ArrayView1<f64>,
    z: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
) -> Result<TslsFit> {
    let n = y.len();
    let k_first = 1 + z.ncols() + x.ncols();
    let k_second = 2 + x.ncols();
    if n <= k_first.max(k_second) {
        return Err(TsciError::Size("too few rows for TSLS".into()));
    }

    let mut first = Array2::zeros((n, k_first));
    first.column_mut(0).fill(1.0);
    first.slice_mut(s![.., 1..1 + z.ncols()]).assign(z);
    first.slice_mut(s![.., 1 + z.ncols()..]).assign(x);
    let gamma = least_squares(&first.view(), d);
    let d_hat = first.dot(&gamma);

    let mut second = Array2::zeros((n, k_second));
    second.column_mut(0).fill(1.0);
    second.column_mut(1).assign(&d_hat);
    second.slice_mut(s![.., 2..]).assign(x);
    let theta = least_squares(&second.view(), y);
    let beta = theta[1];

    // structural residuals use the observed treatment
    let mut actual = second.clone();
    actual.column_mut(1).assign(d);
    let resid = y - &actual.dot(&theta);
    let sigma_sq = resid.dot(&resid) / (n - k_second) as f64;
    let diag = gram_inverse_diag(&second.view()).ok_or_else(|| {
        TsciError::NumericalDegeneracy("singular TSLS design".into())
    })?;
    Ok(TslsFit {
        beta,
        se: (sigma_sq * diag[1]).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::basis_omega;
    use crate::data::{build_w, SplitIndex, WMode};
    use crate::violation::{polynomial_violation_basis, residual_projector, transform_matrix};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use rand::Rng;

    struct Toy {
        tm: TransformMatrix,
        proj: ResidualProjector,
        y: Array1<f64>,
        d: Array1<f64>,
        v: Array2<f64>,
        w_full: Array2<f64>,
    }

    /// Basis smoother over the full sample with a degree-1 violation space.
    fn toy(seed: u64, n: usize) -> Toy {
        let mut rng = crate::rng::stream_rng(seed, 0);
        let z = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 4.0 - 2.0);
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let w = build_w(&x.view(), WMode::Linear).unwrap();
        let omega = basis_omega(&z.view(), &w, 3).unwrap();
        let vb = polynomial_violation_basis(&z.column(0), 1);
        let split = SplitIndex::full(n);
        let tm = transform_matrix(&omega, &vb, &w, &split).unwrap();
        let proj = residual_projector(&vb.v.view(), &w.w.view()).unwrap();
        let w_full = w.w.clone();
        let d = Array1::from_shape_fn(n, |i| {
            z[[i, 0]] + 0.8 * z[[i, 0]].powi(2) + 0.2 * z[[i, 0]].powi(3) + 0.3 * x[[i, 0]]
                + 0.05 * (rng.random::<f64>() - 0.5)
        });
        let y = Array1::from_shape_fn(n, |i| {
            2.0 * d[i] + 0.5 * z[[i, 0]] - 0.7 * x[[i, 0]] + 0.02 * (rng.random::<f64>() - 0.5)
        });
        Toy {
            tm,
            proj,
            y,
            d,
            v: vb.v,
            w_full,
        }
    }

    #[test]
    fn proportional_outcome_returns_slope() {
        let t = toy(1, 60);
        let y = &t.d * 3.5;
        let b = beta_init(&y.view(), &t.d.view(), &t.tm).unwrap();
        assert_abs_diff_eq!(b, 3.5, epsilon = 1e-10);
    }

    #[test]
    fn noiseless_identified_construction_recovers_beta() {
        // h in span(V), f not in span(V), no noise: exact recovery
        let n = 80;
        let mut rng = crate::rng::stream_rng(7, 0);
        let z = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 4.0 - 2.0);
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let w = build_w(&x.view(), WMode::Linear).unwrap();
        let omega = basis_omega(&z.view(), &w, 3).unwrap();
        let vb = polynomial_violation_basis(&z.column(0), 1);
        let tm = transform_matrix(&omega, &vb, &w, &SplitIndex::full(n)).unwrap();
        let beta_true = -1.3;
        let d = Array1::from_shape_fn(n, |i| z[[i, 0]].powi(2) - 0.4 * x[[i, 0]]);
        let y = Array1::from_shape_fn(n, |i| beta_true * d[i] + 0.9 * z[[i, 0]] + 0.3 * x[[i, 0]]);
        let b = beta_init(&y.view(), &d.view(), &tm).unwrap();
        assert_abs_diff_eq!(b, beta_true, epsilon = 1e-8);
    }

    #[test]
    fn adding_violation_shift_leaves_estimate_unchanged() {
        let t = toy(2, 70);
        let b0 = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let shifted = &t.y + &(&t.v.column(0) * 5.0);
        let b1 = beta_init(&shifted.view(), &t.d.view(), &t.tm).unwrap();
        assert_abs_diff_eq!(b1, b0, epsilon = 1e-9 * b0.abs().max(1.0));
    }

    #[test]
    fn residual_is_orthogonal_to_span_and_matches_ols() {
        let t = toy(3, 20);
        let beta = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let eps = residual_eps(&t.y.view(), &t.d.view(), beta, &t.proj);
        // orthogonal to every violation column
        for col in 0..t.v.ncols() {
            let scale = t.v.column(col).dot(&t.v.column(col)).sqrt();
            assert!(t.v.column(col).dot(&eps).abs() < 1e-10 * scale.max(1.0));
        }
        // normal-equations oracle: OLS residual of (y - d beta) on [V | W],
        // where W is the same [1 | x] span the projector was built on
        let raw = &t.y - &(&t.d * beta);
        let joint = {
            let mut j = Array2::zeros((20, t.v.ncols() + t.w_full.ncols()));
            j.slice_mut(s![.., ..t.v.ncols()]).assign(&t.v);
            j.slice_mut(s![.., t.v.ncols()..]).assign(&t.w_full);
            j
        };
        let gram = crate::linalg::to_na(&joint.view());
        let gtg = gram.transpose() * &gram;
        let gty = nalgebra::DVector::from_fn(joint.ncols(), |k, _| joint.column(k).dot(&raw));
        let coef = gtg.try_inverse().unwrap() * gty;
        let mut oracle = raw.clone();
        for k in 0..joint.ncols() {
            oracle = oracle - &joint.column(k).to_owned() * coef[k];
        }
        for (a, b) in eps.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_residual_when_outcome_is_fitted_exactly() {
        let t = toy(4, 30);
        let y = &t.d * 1.25;
        let eps = residual_eps(&y.view(), &t.d.view(), 1.25, &t.proj);
        assert!(eps.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cov_hat_vanishes_when_first_stage_is_exact() {
        let t = toy(5, 40);
        let b = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let cov = cov_hat(
            &t.d.view(),
            &t.d.view(), // f_hat = d exactly
            &t.y.view(),
            b,
            &t.proj,
            t.tm.rank_adjusted(),
        )
        .unwrap();
        assert_abs_diff_eq!(cov, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn corrected_homo_arithmetic() {
        assert_abs_diff_eq!(
            beta_corrected_homo(1.1, 0.2, 3.0, 6.0).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            beta_corrected_homo(0.7, 0.0, 10.0, 2.0).unwrap(),
            0.7,
            epsilon = 1e-14
        );
    }

    #[test]
    fn corrected_hetero_reduces_to_init_without_bias() {
        let t = toy(6, 50);
        let b = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let denom = t.tm.quad(&t.d.view(), &t.d.view());
        let zeros = Array1::zeros(50);
        let eps = residual_eps(&t.y.view(), &t.d.view(), b, &t.proj);
        let same = beta_corrected_hetero(b, &t.tm, &zeros.view(), &eps.view(), denom).unwrap();
        assert_abs_diff_eq!(same, b, epsilon = 1e-12);
    }

    #[test]
    fn correction_identity_hetero_equals_homo_for_constant_product() {
        // delta_i * eps_i == c for all i makes the diagonal correction equal
        // the trace correction
        let t = toy(7, 45);
        let b = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let denom = t.tm.quad(&t.d.view(), &t.d.view());
        let c = 0.37;
        let delta = Array1::from_elem(45, c);
        let eps = Array1::ones(45);
        let hetero = beta_corrected_hetero(b, &t.tm, &delta.view(), &eps.view(), denom).unwrap();
        let homo = beta_corrected_homo(b, c, t.tm.trace(), denom).unwrap();
        assert_abs_diff_eq!(hetero, homo, epsilon = 1e-10);
    }

    #[test]
    fn se_hetero_scales_with_outcome() {
        let t = toy(8, 40);
        let b = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let denom = t.tm.quad(&t.d.view(), &t.d.view());
        let eps = residual_eps(&t.y.view(), &t.d.view(), b, &t.proj);
        let (se1, _) = se_hetero(&eps.view(), &t.tm, &t.d.view(), denom).unwrap();
        let doubled = &eps * 2.0;
        let (se2, _) = se_hetero(&doubled.view(), &t.tm, &t.d.view(), denom).unwrap();
        assert_abs_diff_eq!(se2, 2.0 * se1, epsilon = 1e-12);
    }

    #[test]
    fn se_homo_simplifies_for_projector_transform() {
        // idempotent M: se = sigma / sqrt(dᵀ M d)
        let t = toy(9, 60);
        let b = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let denom = t.tm.quad(&t.d.view(), &t.d.view());
        let eps = residual_eps(&t.y.view(), &t.d.view(), b, &t.proj);
        let nrm = eps.dot(&eps);
        let (se, degenerate) =
            se_homo(nrm, &t.tm, &t.d.view(), denom, 60, t.tm.rank_adjusted()).unwrap();
        let sigma = (nrm / (60 - t.tm.rank_adjusted()) as f64).sqrt();
        assert!(!degenerate);
        assert_abs_diff_eq!(se, sigma / denom.sqrt(), epsilon = 1e-9 * se.abs());
    }

    #[test]
    fn zero_eps_gives_degenerate_se() {
        let t = toy(10, 30);
        let denom = t.tm.quad(&t.d.view(), &t.d.view());
        let zeros = Array1::zeros(30);
        let (se, degenerate) = se_hetero(&zeros.view(), &t.tm, &t.d.view(), denom).unwrap();
        assert_eq!(se, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn confidence_interval_examples() {
        let (lo, hi) = confidence_interval(1.0, 0.1, 0.05);
        assert_abs_diff_eq!(lo, 0.804, epsilon = 1e-3);
        assert_abs_diff_eq!(hi, 1.196, epsilon = 1e-3);
        let (l1, h1) = confidence_interval(2.0, 5.0, 1.0);
        assert_abs_diff_eq!(l1, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h1, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn plug_and_ee_coincide_with_init_for_projector_stage() {
        // idempotent smoother and empty V: all three ratios collapse
        let n = 50;
        let mut rng = crate::rng::stream_rng(11, 0);
        let z = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 2.0 - 1.0);
        let x = Array2::from_shape_fn((n, 0), |_| 0.0);
        let w = build_w(&x.view(), WMode::Linear).unwrap();
        let omega = basis_omega(&z.view(), &w, 2).unwrap();
        let vb = polynomial_violation_basis(&z.column(0), 0);
        let tm = transform_matrix(&omega, &vb, &w, &SplitIndex::full(n)).unwrap();
        let proj = residual_projector(&vb.v.view(), &w.w.view()).unwrap();
        let d = Array1::from_shape_fn(n, |i| z[[i, 0]] + z[[i, 0]].powi(2));
        let y = Array1::from_shape_fn(n, |i| 1.7 * d[i] + 0.3 + 0.1 * (i as f64 * 0.7).sin());
        let f_hat = omega.apply(&d.view());
        let b_init = beta_init(&y.view(), &d.view(), &tm).unwrap();
        let fit = plug_ee_estimators(&y.view(), &d.view(), &f_hat.view(), &proj).unwrap();
        assert_abs_diff_eq!(fit.beta_plug, b_init, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.beta_ee, b_init, epsilon = 1e-8);
        assert!(!fit.ee_denominator_negative);
    }

    #[test]
    fn location_and_scale_equivariance() {
        let t = toy(12, 55);
        let b = beta_init(&t.y.view(), &t.d.view(), &t.tm).unwrap();
        let shift = &t.y + &(&t.d * 4.0);
        let b_shift = beta_init(&shift.view(), &t.d.view(), &t.tm).unwrap();
        assert_abs_diff_eq!(b_shift, b + 4.0, epsilon = 1e-9 * b.abs().max(1.0));

        let scaled = &t.y * 3.0;
        let b_scaled = beta_init(&scaled.view(), &t.d.view(), &t.tm).unwrap();
        assert_abs_diff_eq!(b_scaled, 3.0 * b, epsilon = 1e-9 * b.abs().max(1.0));

        let denom = t.tm.quad(&t.d.view(), &t.d.view());
        let eps = residual_eps(&t.y.view(), &t.d.view(), b, &t.proj);
        let (se, _) = se_hetero(&eps.view(), &t.tm, &t.d.view(), denom).unwrap();
        let eps_shift = residual_eps(&shift.view(), &t.d.view(), b_shift, &t.proj);
        let (se_shift, _) = se_hetero(&eps_shift.view(), &t.tm, &t.d.view(), denom).unwrap();
        assert_abs_diff_eq!(se_shift, se, epsilon = 1e-9 * se.abs().max(1e-12));
    }

    #[test]
    fn beta_init_matches_textbook_tsls_without_violation() {
        // basis smoother with degree 1, V empty, W = [1]: identical to the
        // classical just-identified slope
        let n = 90;
        let mut rng = crate::rng::stream_rng(13, 0);
        let z = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 2.0 - 1.0);
        let x = Array2::zeros((n, 0));
        let w = build_w(&x.view(), WMode::Linear).unwrap();
        let omega = basis_omega(&z.view(), &w, 1).unwrap();
        let vb = polynomial_violation_basis(&z.column(0), 0);
        let tm = transform_matrix(&omega, &vb, &w, &SplitIndex::full(n)).unwrap();
        let d = Array1::from_shape_fn(n, |i| 2.0 * z[[i, 0]] + (rng.random::<f64>() - 0.5));
        let y = Array1::from_shape_fn(n, |i| 0.8 * d[i] + 0.5 + 0.3 * (rng.random::<f64>() - 0.5));
        let b = beta_init(&y.view(), &d.view(), &tm).unwrap();

        // textbook ratio of centered cross-moments
        let zc = z.column(0).to_owned();
        let zm = zc.sum() / n as f64;
        let ym = y.sum() / n as f64;
        let dm = d.sum() / n as f64;
        let num: f64 = (0..n).map(|i| (zc[i] - zm) * (y[i] - ym)).sum();
        let den: f64 = (0..n).map(|i| (zc[i] - zm) * (d[i] - dm)).sum();
        assert_abs_diff_eq!(b, num / den, epsilon = 1e-8 * (num / den).abs());

        let fit = tsls(&y.view(), &d.view(), &z.view(), &x.view()).unwrap();
        assert_abs_diff_eq!(fit.beta, num / den, epsilon = 1e-8 * (num / den).abs());
        assert!(fit.se > 0.0);
    }
}
