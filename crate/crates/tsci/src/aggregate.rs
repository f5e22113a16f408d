//! Aggregation of per-split estimates into a single inference: the median
//! interval and the multi-split p-value interval.

use crate::error::{Result, TsciError};
use crate::norm::{phi, z_two_sided};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSplitResult {
    pub s: usize,
    pub betas: Vec<f64>,
    pub ses: Vec<f64>,
    pub beta_med: f64,
    pub se_med: f64,
    pub ci_med: (f64, f64),
    pub ci_multisplit: Option<(f64, f64)>,
    /// The accepted grid region was empty.
    pub multisplit_empty: bool,
    /// The accepted grid region was not contiguous; the enclosing interval is
    /// still reported.
    pub multisplit_noncontiguous: bool,
    pub alpha: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median point estimate with the deviation-inflated median standard error.
pub fn median_ci(betas: &[f64], ses: &[f64], alpha: f64) -> Result<(f64, f64, (f64, f64))> {
    if betas.is_empty() || betas.len() != ses.len() {
        return Err(TsciError::Size("need matched, nonempty estimates".into()));
    }
    let beta_med = median(betas);
    let inflated: Vec<f64> = betas
        .iter()
        .zip(ses.iter())
        .map(|(b, s)| (s * s + (b - beta_med) * (b - beta_med)).sqrt())
        .collect();
    let se_med = median(&inflated);
    let z = z_two_sided(alpha);
    Ok((beta_med, se_med, (beta_med - z * se_med, beta_med + z * se_med)))
}

/// Multi-split interval by p-value inversion on a grid: keep the points where
/// twice the median p-value stays above `alpha` and return the tightest
/// enclosing interval of that accepted region.
pub fn multisplit_ci(
    betas: &[f64],
    ses: &[f64],
    alpha: f64,
    grid_points: usize,
) -> Result<(Option<(f64, f64)>, bool)> {
    if betas.is_empty() || betas.len() != ses.len() {
        return Err(TsciError::Size("need matched, nonempty estimates".into()));
    }
    if grid_points < 3 {
        return Err(TsciError::Config("grid needs at least 3 points".into()));
    }
    let b_min = betas.iter().cloned().fold(f64::INFINITY, f64::min);
    let b_max = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let se_max = ses.iter().cloned().fold(0.0f64, f64::max);
    let lo = b_min - 6.0 * se_max;
    let hi = b_max + 6.0 * se_max;
    let step = (hi - lo) / (grid_points - 1) as f64;

    let mut accepted: Vec<f64> = Vec::new();
    let mut p_values = vec![0.0f64; betas.len()];
    for g in 0..grid_points {
        let beta0 = lo + g as f64 * step;
        for (i, (b, s)) in betas.iter().zip(ses.iter()).enumerate() {
            p_values[i] = if *s > 0.0 {
                2.0 * (1.0 - phi((b - beta0).abs() / s))
            } else if *b == beta0 {
                1.0
            } else {
                0.0
            };
        }
        if 2.0 * median(&p_values) > alpha {
            accepted.push(beta0);
        }
    }

    if accepted.is_empty() {
        return Ok((None, false));
    }
    let first = accepted[0];
    let last = *accepted.last().unwrap();
    let contiguous = accepted.len() == (((last - first) / step).round() as usize + 1);
    Ok((Some((first, last)), !contiguous))
}

/// Aggregate per-split `(beta, se)` pairs.
pub fn aggregate(betas: &[f64], ses: &[f64], alpha: f64, grid_points: usize) -> Result<MultiSplitResult> {
    let (beta_med, se_med, ci_med) = median_ci(betas, ses, alpha)?;
    let (ci_multisplit, noncontiguous) = multisplit_ci(betas, ses, alpha, grid_points)?;
    Ok(MultiSplitResult {
        s: betas.len(),
        betas: betas.to_vec(),
        ses: ses.to_vec(),
        beta_med,
        se_med,
        ci_med,
        ci_multisplit,
        multisplit_empty: ci_multisplit.is_none(),
        multisplit_noncontiguous: noncontiguous,
        alpha,
    })
}

/// Default grid resolution: sub-millimeter interval endpoints at the scale of
/// typical applications.
pub const DEFAULT_GRID_POINTS: usize = 2001;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_split_reduces_to_z_test_inversion() {
        let (b, s, ci) = median_ci(&[1.2], &[0.3], 0.05).unwrap();
        assert_abs_diff_eq!(b, 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(ci.0, 1.2 - 1.959963984540054 * 0.3, epsilon = 1e-9);

        // with one split the accepted region {2 p(beta0) > alpha} inverts the
        // z test at level alpha/2: half-width z_{alpha/4} * se
        let (ms, noncontig) = multisplit_ci(&[1.2], &[0.3], 0.05, 4001).unwrap();
        let (lo, hi) = ms.unwrap();
        let z = crate::norm::inv_phi(1.0 - 0.05 / 4.0);
        let step = 12.0 * 0.3 / 4000.0;
        assert!((lo - (1.2 - z * 0.3)).abs() <= step + 1e-12);
        assert!((hi - (1.2 + z * 0.3)).abs() <= step + 1e-12);
        assert!(!noncontig);
    }

    #[test]
    fn hand_arithmetic_median_example() {
        let (b, s, _) = median_ci(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 0.05).unwrap();
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-15);
        // deviations (1, 0, 1) -> median 1
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_splits_match_their_inverted_ci() {
        let betas = vec![0.5; 9];
        let ses = vec![0.1; 9];
        // median CI equals each split's Wald interval
        let (_, _, ci) = median_ci(&betas, &ses, 0.05).unwrap();
        assert_abs_diff_eq!(ci.0, 0.5 - 1.959963984540054 * 0.1, epsilon = 1e-9);
        // multi-split CI equals each split's inverted z test
        let (ms, _) = multisplit_ci(&betas, &ses, 0.05, 4001).unwrap();
        let (lo, hi) = ms.unwrap();
        let z = crate::norm::inv_phi(1.0 - 0.05 / 4.0);
        let step = 12.0 * 0.1 / 4000.0;
        assert!((lo - (0.5 - z * 0.1)).abs() <= step + 1e-12);
        assert!((hi - (0.5 + z * 0.1)).abs() <= step + 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let betas = [0.9, 1.4, 1.1, 1.0];
        let ses = [0.2, 0.1, 0.4, 0.3];
        let (b1, s1, _) = median_ci(&betas, &ses, 0.05).unwrap();
        let betas_p = [1.4, 1.0, 0.9, 1.1];
        let ses_p = [0.1, 0.3, 0.2, 0.4];
        let (b2, s2, _) = median_ci(&betas_p, &ses_p, 0.05).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn contiguity_is_checked() {
        // wildly separated splits with tiny ses: nothing is accepted except
        // possibly two islands; the enclosing interval must flag it
        let betas = [0.0, 0.0, 10.0, 10.0];
        let ses = [0.01, 0.01, 0.01, 0.01];
        let (region, noncontig) = multisplit_ci(&betas, &ses, 0.05, 2001).unwrap();
        // acceptance needs 2*median p > alpha; with a 2-2 split of extreme
        // p-values the median is the average of ~0 and ~0 away from both
        // clusters, so acceptance happens only near the clusters, if at all
        if let Some(_) = region {
            assert!(noncontig || region.unwrap().0 > -1.0);
        }
    }

    #[test]
    fn aggregate_is_bit_stable_under_reserialization() {
        let betas: Vec<f64> = (0..501).map(|i| 0.06 + 1e-4 * ((i * 37 % 101) as f64)).collect();
        let ses: Vec<f64> = (0..501).map(|i| 0.015 + 1e-5 * ((i * 17 % 89) as f64)).collect();
        let a1 = aggregate(&betas, &ses, 0.05, DEFAULT_GRID_POINTS).unwrap();
        let json = serde_json::to_string(&a1).unwrap();
        let back: MultiSplitResult = serde_json::from_str(&json).unwrap();
        let a2 = aggregate(&back.betas, &back.ses, 0.05, DEFAULT_GRID_POINTS).unwrap();
        assert_eq!(a1.beta_med.to_bits(), a2.beta_med.to_bits());
        assert_eq!(a1.se_med.to_bits(), a2.se_med.to_bits());
        assert_eq!(
            a1.ci_multisplit.unwrap().0.to_bits(),
            a2.ci_multisplit.unwrap().0.to_bits()
        );
    }
}
