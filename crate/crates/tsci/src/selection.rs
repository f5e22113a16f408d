//! Violation-space selection: pairwise variances, the bootstrap threshold,
//! layer tests, the selected orders, and the IV-validity flag.

use crate::error::{Result, TsciError};
use crate::estimator::TsciFit;
use crate::norm::{upper_empirical_quantile, z_upper};
use crate::rng::stream_rng;
use crate::violation::{batch_quadratics, TransformMatrix};
use ndarray::{Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One entry of the pairwise comparison table. `diff_stat` is the normalized
/// difference of the two sequential estimates; `fixed_reject` applies the
/// fixed normal-quantile comparison test while selection itself is driven by
/// the bootstrap threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseStat {
    pub q: usize,
    pub q_prime: usize,
    pub diff_stat: f64,
    pub h_hat: f64,
    pub fixed_reject: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub q_max: usize,
    /// Sequential fits for `q = 0..=q_max` (hetero-seq correction).
    pub fits: Vec<TsciFit>,
    pub pairwise: Vec<PairwiseStat>,
    pub rho_hat: f64,
    /// Layer-test flags `C(V_q)` for `q = 0..=q_max`.
    pub layer_flags: Vec<u8>,
    pub q_c: usize,
    pub q_r: usize,
    pub invalid_iv: bool,
    pub notes: Vec<String>,
}

/// Estimated variance of the difference of two sequential estimates,
/// `H(V_q, V_q')`, from the residuals at the largest space.
pub fn h_hat(
    eps_qmax: &ArrayView1<f64>,
    m_q: &TransformMatrix,
    m_qp: &TransformMatrix,
    d_a1: &ArrayView1<f64>,
) -> Result<f64> {
    let denom_q = m_q.quad(d_a1, d_a1);
    let denom_p = m_qp.quad(d_a1, d_a1);
    if denom_q <= 0.0 || denom_p <= 0.0 {
        return Err(TsciError::WeakIv(
            "non-positive curvature denominator in pairwise variance".into(),
        ));
    }
    let md_q = m_q.apply(d_a1);
    let md_p = m_qp.apply(d_a1);
    let mut t_p = 0.0;
    let mut t_q = 0.0;
    let mut t_x = 0.0;
    for ((e, a), b) in eps_qmax.iter().zip(md_p.iter()).zip(md_q.iter()) {
        let e2 = e * e;
        t_p += e2 * a * a;
        t_q += e2 * b * b;
        t_x += e2 * a * b;
    }
    let value = t_p / (denom_p * denom_p) + t_q / (denom_q * denom_q)
        - 2.0 * t_x / (denom_p * denom_q);
    if value < -1e-10 {
        return Err(TsciError::NumericalDegeneracy(format!(
            "pairwise variance {value:.3e} is negative beyond tolerance"
        )));
    }
    Ok(value.max(0.0))
}

/// Bootstrap threshold `rho_hat(alpha0)`: upper-`alpha0` quantile of
/// `|T^[l]|`, where `T^[l]` maximizes the normalized difference of
/// first-stage-weighted multiplier noise over all pairs `q < q'`.
///
/// The unknown `f` is plugged in as the treatment vector itself, the same
/// plug-in the pairwise variance uses; each pair's statistic then has unit
/// variance by construction, however close two spaces are.
pub fn comparison_bootstrap_rho(
    d_a1: &ArrayView1<f64>,
    eps_qmax: &ArrayView1<f64>,
    transforms: &[&TransformMatrix],
    h_table: &[Vec<f64>],
    alpha0: f64,
    l: usize,
    seed: u64,
) -> Result<f64> {
    let q_max = transforms.len() - 1;
    if q_max < 1 {
        return Err(TsciError::Config(
            "need at least two violation spaces to compare".into(),
        ));
    }
    if l < 50 {
        return Err(TsciError::Config(
            "need at least 50 bootstrap replications".into(),
        ));
    }
    if !(alpha0 > 0.0 && alpha0 < 0.5) {
        return Err(TsciError::Config("alpha0 must be in (0, 0.5)".into()));
    }
    let n1 = eps_qmax.len();
    let mean = eps_qmax.sum() / n1 as f64;
    let tilde: Vec<f64> = eps_qmax.iter().map(|e| e - mean).collect();
    let mut rng = stream_rng(seed, 0x53454c43); // "SELC"
    let eps_mat = Array2::from_shape_fn((n1, l), |(i, _)| {
        let u: f64 = StandardNormal.sample(&mut rng);
        u * tilde[i]
    });

    // dᵀ M_q eps^[l] for every transform and draw, smoother shared
    let batches = batch_quadratics(transforms, d_a1, &eps_mat.view());
    let f_denoms: Vec<f64> = transforms.iter().map(|m| m.quad(d_a1, d_a1)).collect();
    if f_denoms.iter().any(|&v| v <= 0.0) {
        return Err(TsciError::WeakIv(
            "non-positive curvature in comparison bootstrap".into(),
        ));
    }

    let mut t_stats = Vec::with_capacity(l);
    for col in 0..l {
        let mut t_max = f64::NEG_INFINITY;
        for q in 0..q_max {
            for qp in (q + 1)..=q_max {
                let h = h_table[q][qp];
                if h <= 0.0 {
                    continue;
                }
                let diff = batches[qp].cross_f[col] / f_denoms[qp]
                    - batches[q].cross_f[col] / f_denoms[q];
                let t = diff / h.sqrt();
                if t > t_max {
                    t_max = t;
                }
            }
        }
        if t_max.is_finite() {
            t_stats.push(t_max.abs());
        }
    }
    if t_stats.is_empty() {
        return Ok(0.0);
    }
    Ok(upper_empirical_quantile(&t_stats, alpha0))
}

/// Layer test `C(V_q)`: flag 1 iff some larger space yields a normalized
/// difference above the threshold. A zero variance with a nonzero difference
/// counts as an infinite statistic.
pub fn layer_test(
    q: usize,
    betas: &[f64],
    h_table: &[Vec<f64>],
    rho_hat: f64,
    notes: &mut Vec<String>,
) -> u8 {
    let q_max = betas.len() - 1;
    debug_assert!(q < q_max);
    let mut worst = 0.0f64;
    for qp in (q + 1)..=q_max {
        let diff = (betas[q] - betas[qp]).abs();
        let h = h_table[q][qp];
        let stat = if h > 0.0 {
            diff / h.sqrt()
        } else if diff > 0.0 {
            notes.push(format!(
                "zero pairwise variance with nonzero difference at ({q}, {qp})"
            ));
            f64::INFINITY
        } else {
            0.0
        };
        if stat > worst {
            worst = stat;
        }
    }
    u8::from(worst > rho_hat)
}

/// Run Algorithm-style selection over the chain `0..=q_max`.
///
/// `seq_fits` are the sequential (hetero-seq) fits per order; their point
/// estimates drive the comparisons. When `q_max = 0` there is nothing to
/// compare: the report carries `q_c = q_r = 0`, a valid-IV flag, and a note.
pub fn select(
    transforms: &[&TransformMatrix],
    seq_fits: Vec<TsciFit>,
    eps_qmax: &ArrayView1<f64>,
    d_a1: &ArrayView1<f64>,
    alpha0: f64,
    l: usize,
    seed: u64,
) -> Result<SelectionReport> {
    let q_max = transforms.len() - 1;
    assert_eq!(seq_fits.len(), transforms.len());
    let mut notes = Vec::new();

    if q_max == 0 {
        notes.push("q_max = 0: no comparison possible, reporting the null space".into());
        return Ok(SelectionReport {
            q_max,
            fits: seq_fits,
            pairwise: Vec::new(),
            rho_hat: f64::NAN,
            layer_flags: vec![0],
            q_c: 0,
            q_r: 0,
            invalid_iv: false,
            notes,
        });
    }

    // full pairwise variance table, computed once
    let mut h_table = vec![vec![0.0f64; q_max + 1]; q_max + 1];
    for q in 0..q_max {
        for qp in (q + 1)..=q_max {
            let h = h_hat(eps_qmax, transforms[q], transforms[qp], d_a1)?;
            h_table[q][qp] = h;
            h_table[qp][q] = h;
        }
    }

    let rho_hat =
        comparison_bootstrap_rho(d_a1, eps_qmax, transforms, &h_table, alpha0, l, seed)?;

    let betas: Vec<f64> = seq_fits.iter().map(|f| f.beta).collect();
    let z0 = z_upper(alpha0);
    let mut pairwise = Vec::new();
    for q in 0..q_max {
        for qp in (q + 1)..=q_max {
            let h = h_table[q][qp];
            let diff = (betas[q] - betas[qp]).abs();
            let diff_stat = if h > 0.0 {
                diff / h.sqrt()
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            pairwise.push(PairwiseStat {
                q,
                q_prime: qp,
                diff_stat,
                h_hat: h,
                fixed_reject: diff_stat > z0,
            });
        }
    }

    let mut layer_flags = Vec::with_capacity(q_max + 1);
    for q in 0..q_max {
        layer_flags.push(layer_test(q, &betas, &h_table, rho_hat, &mut notes));
    }
    layer_flags.push(0); // C(V_{q_max}) = 0 by definition

    let q_c = layer_flags
        .iter()
        .position(|&c| c == 0)
        .expect("the last flag is always zero");
    let q_r = (q_c + 1).min(q_max);
    let invalid_iv = layer_flags[0] == 1;

    Ok(SelectionReport {
        q_max,
        fits: seq_fits,
        pairwise,
        rho_hat,
        layer_flags,
        q_c,
        q_r,
        invalid_iv,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::basis_omega;
    use crate::data::{build_w, SplitIndex, WMode};
    use crate::violation::{polynomial_violation_basis, transform_matrix};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use rand::Rng;

    fn chain_setup(
        n: usize,
        seed: u64,
    ) -> (Vec<TransformMatrix>, Array1<f64>, Array1<f64>, Array1<f64>) {
        let mut rng = crate::rng::stream_rng(seed, 0);
        let z = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 4.0 - 2.0);
        let x = Array2::zeros((n, 0));
        let w = build_w(&x.view(), WMode::Linear).unwrap();
        let omega =
            basis_omega(&z.clone().insert_axis(ndarray::Axis(1)).view(), &w, 4).unwrap();
        let split = SplitIndex::full(n);
        let transforms: Vec<TransformMatrix> = (0..=2)
            .map(|q| {
                let vb = polynomial_violation_basis(&z.view(), q);
                transform_matrix(&omega, &vb, &w, &split).unwrap()
            })
            .collect();
        let d = Array1::from_shape_fn(n, |i| {
            z[i] + z[i].powi(2) + 0.5 * z[i].powi(4) + 0.3 * rng.random::<f64>()
        });
        let f_hat = omega.apply(&d.view());
        let eps = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        (transforms, d, f_hat, eps)
    }

    #[test]
    fn identical_spaces_have_zero_h() {
        let (tms, d, _, eps) = chain_setup(50, 1);
        let h = h_hat(&eps.view(), &tms[1], &tms[1], &d.view()).unwrap();
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_eps_gives_zero_h() {
        let (tms, d, _, _) = chain_setup(50, 2);
        let zeros = Array1::zeros(50);
        let h = h_hat(&zeros.view(), &tms[0], &tms[1], &d.view()).unwrap();
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn h_matches_direct_reevaluation() {
        let (tms, d, _, eps) = chain_setup(20, 3);
        let h = h_hat(&eps.view(), &tms[0], &tms[2], &d.view()).unwrap();
        // direct formula with dense matrices
        let m_q = tms[0].materialize();
        let m_p = tms[2].materialize();
        let dq: f64 = d.dot(&m_q.dot(&d));
        let dp: f64 = d.dot(&m_p.dot(&d));
        let a = m_p.dot(&d);
        let b = m_q.dot(&d);
        let mut t_p = 0.0;
        let mut t_q = 0.0;
        let mut t_x = 0.0;
        for i in 0..20 {
            let e2 = eps[i] * eps[i];
            t_p += e2 * a[i] * a[i];
            t_q += e2 * b[i] * b[i];
            t_x += e2 * a[i] * b[i];
        }
        let oracle = t_p / (dp * dp) + t_q / (dq * dq) - 2.0 * t_x / (dp * dq);
        assert_abs_diff_eq!(h, oracle.max(0.0), epsilon = 1e-12 * h.abs().max(1e-12));
        // symmetry in the pair
        let h_swapped = h_hat(&eps.view(), &tms[2], &tms[0], &d.view()).unwrap();
        assert_abs_diff_eq!(h, h_swapped, epsilon = 1e-14);
    }

    #[test]
    fn rho_deterministic_and_zero_for_zero_eps() {
        let (tms, d, _f_hat, eps) = chain_setup(60, 4);
        let refs: Vec<&TransformMatrix> = tms.iter().collect();
        let mut h_table = vec![vec![0.0; 3]; 3];
        for q in 0..2 {
            for qp in (q + 1)..=2 {
                let h = h_hat(&eps.view(), refs[q], refs[qp], &d.view()).unwrap();
                h_table[q][qp] = h;
                h_table[qp][q] = h;
            }
        }
        let r1 =
            comparison_bootstrap_rho(&d.view(), &eps.view(), &refs, &h_table, 0.025, 80, 7)
                .unwrap();
        let r2 =
            comparison_bootstrap_rho(&d.view(), &eps.view(), &refs, &h_table, 0.025, 80, 7)
                .unwrap();
        assert_eq!(r1, r2);
        assert!(r1 > 0.0);

        let zeros = Array1::zeros(60);
        let mut zero_table = vec![vec![0.0; 3]; 3];
        for q in 0..2 {
            for qp in (q + 1)..=2 {
                let h = h_hat(&zeros.view(), refs[q], refs[qp], &d.view()).unwrap();
                zero_table[q][qp] = h;
                zero_table[qp][q] = h;
            }
        }
        let r0 =
            comparison_bootstrap_rho(&d.view(), &zeros.view(), &refs, &zero_table, 0.025, 80, 7)
                .unwrap();
        assert_eq!(r0, 0.0);
    }

    #[test]
    fn rho_statistics_have_unit_scale_per_pair() {
        // near-identical adjacent spaces must not blow up the threshold: by
        // construction each pair's bootstrap statistic has variance about one
        let (tms, d, _f, eps) = chain_setup(80, 9);
        let refs: Vec<&TransformMatrix> = tms.iter().collect();
        let mut h_table = vec![vec![0.0; 3]; 3];
        for q in 0..2 {
            for qp in (q + 1)..=2 {
                let h = h_hat(&eps.view(), refs[q], refs[qp], &d.view()).unwrap();
                h_table[q][qp] = h;
                h_table[qp][q] = h;
            }
        }
        let rho =
            comparison_bootstrap_rho(&d.view(), &eps.view(), &refs, &h_table, 0.025, 200, 3)
                .unwrap();
        // max over three unit-variance statistics: far below 10
        assert!(rho > 0.5 && rho < 10.0, "rho = {rho}");
    }

    #[test]
    fn layer_test_flags_large_differences() {
        let betas = vec![0.0, 10.0, 10.0];
        let mut h = vec![vec![0.0; 3]; 3];
        h[0][1] = 1.0;
        h[1][0] = 1.0;
        h[0][2] = 1.0;
        h[2][0] = 1.0;
        h[1][2] = 1.0;
        h[2][1] = 1.0;
        let mut notes = Vec::new();
        assert_eq!(layer_test(0, &betas, &h, 1.0, &mut notes), 1);
        assert_eq!(layer_test(1, &betas, &h, 1.0, &mut notes), 0);

        let equal = vec![2.0, 2.0, 2.0];
        assert_eq!(layer_test(0, &equal, &h, 1.0, &mut notes), 0);
    }

    #[test]
    fn zero_variance_with_difference_is_infinite_statistic() {
        let betas = vec![0.0, 1.0];
        let h = vec![vec![0.0; 2]; 2];
        let mut notes = Vec::new();
        assert_eq!(layer_test(0, &betas, &h, 1e12, &mut notes), 1);
        assert_eq!(notes.len(), 1);
    }
}
