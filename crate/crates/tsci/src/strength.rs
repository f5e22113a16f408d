//! Generalized IV strength: point estimate, wild-bootstrap band, the strength
//! test, and the largest adjustable violation order.

use crate::error::{Result, TsciError};
use crate::norm::upper_empirical_quantile;
use crate::rng::stream_rng;
use crate::violation::{batch_quadratics, TransformMatrix};
use ndarray::{Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Outcome of the strength test at one violation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrengthResult {
    pub q: usize,
    pub mu_hat: f64,
    /// `max(2 Tr[M(V_q)], 10)`.
    pub threshold: f64,
    /// Upper-`alpha0` bootstrap band for the estimation error of `mu_hat`.
    pub s_quantile: f64,
    pub passed: bool,
    pub bootstrap_reps: usize,
}

/// `mu_hat(V) = dᵀ M d / (|d - f_hat|² / n1)`.
pub fn mu_hat(
    d_a1: &ArrayView1<f64>,
    f_hat: &ArrayView1<f64>,
    m: &TransformMatrix,
) -> Result<f64> {
    let resid = d_a1 - f_hat;
    let scale = resid.dot(&resid) / d_a1.len() as f64;
    if scale <= 0.0 {
        return Err(TsciError::PerfectFit(
            "first stage interpolated the treatment; strength is undefined".into(),
        ));
    }
    Ok(m.quad(d_a1, d_a1) / scale)
}

/// Centered first-stage residuals `delta_tilde` and the normalizing scale
/// `|d - f_hat|² / n1`.
fn centered_residuals(d_a1: &ArrayView1<f64>, f_hat: &ArrayView1<f64>) -> Result<(Vec<f64>, f64)> {
    let n1 = d_a1.len();
    let delta_hat: Vec<f64> = d_a1.iter().zip(f_hat.iter()).map(|(d, f)| d - f).collect();
    let scale = delta_hat.iter().map(|v| v * v).sum::<f64>() / n1 as f64;
    if scale <= 0.0 {
        return Err(TsciError::PerfectFit(
            "first stage interpolated the treatment".into(),
        ));
    }
    let mean = delta_hat.iter().sum::<f64>() / n1 as f64;
    Ok((delta_hat.iter().map(|v| v - mean).collect(), scale))
}

/// Standard-normal multiplier matrix `n1 x l` scaled by the centered
/// residuals; column `l` is one bootstrap draw of `delta`.
fn multiplier_matrix(tilde: &[f64], l: usize, seed: u64) -> Array2<f64> {
    let n1 = tilde.len();
    let mut rng = stream_rng(seed, 0x5354524e); // "STRN"
    Array2::from_shape_fn((n1, l), |(i, _)| {
        let u: f64 = StandardNormal.sample(&mut rng);
        u * tilde[i]
    })
}

/// Bootstrap statistics `S^[l] = (2 f_hatᵀ M delta + deltaᵀ M delta) / scale`
/// for every transform at once, sharing the smoother product across the
/// chain. Returns one vector of `|S|` quantiles inputs per transform.
fn bootstrap_stats(
    transforms: &[&TransformMatrix],
    d_a1: &ArrayView1<f64>,
    f_hat: &ArrayView1<f64>,
    l: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (tilde, scale) = centered_residuals(d_a1, f_hat)?;
    let delta = multiplier_matrix(&tilde, l, seed);
    let batches = batch_quadratics(transforms, f_hat, &delta.view());
    Ok(batches
        .into_iter()
        .map(|b| {
            b.quad_self
                .iter()
                .zip(b.cross_f.iter())
                .map(|(qs, cf)| ((2.0 * cf + qs) / scale).abs())
                .collect()
        })
        .collect())
}

/// Upper-`alpha0` quantile of `|S^[l]|` for a single violation space.
pub fn strength_bootstrap_quantile(
    f_hat: &ArrayView1<f64>,
    m: &TransformMatrix,
    d_a1: &ArrayView1<f64>,
    alpha0: f64,
    l: usize,
    seed: u64,
) -> Result<f64> {
    if l < 50 {
        return Err(TsciError::Config(
            "need at least 50 bootstrap replications".into(),
        ));
    }
    if !(alpha0 > 0.0 && alpha0 < 0.5) {
        return Err(TsciError::Config("alpha0 must be in (0, 0.5)".into()));
    }
    let stats = bootstrap_stats(&[m], d_a1, f_hat, l, seed)?;
    Ok(upper_empirical_quantile(&stats[0], alpha0))
}

/// Run the strength test at one order: pass iff
/// `mu_hat >= max(2 Tr[M], 10) + S_quantile`.
pub fn strength_test(
    d_a1: &ArrayView1<f64>,
    f_hat: &ArrayView1<f64>,
    m: &TransformMatrix,
    alpha0: f64,
    l: usize,
    seed: u64,
) -> Result<StrengthResult> {
    let mu = mu_hat(d_a1, f_hat, m)?;
    let s_quantile = strength_bootstrap_quantile(f_hat, m, d_a1, alpha0, l, seed)?;
    let threshold = (2.0 * m.trace()).max(10.0);
    Ok(StrengthResult {
        q: m.order(),
        mu_hat: mu,
        threshold,
        s_quantile,
        passed: mu >= threshold + s_quantile,
        bootstrap_reps: l,
    })
}

/// Result of scanning the violation chain for the largest adjustable order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum QMaxOutcome {
    /// All orders `0..=q_max` passed; scanning stopped at the first failure.
    Strong { q_max: usize },
    /// The test already fails with no violation adjustment.
    WeakIv,
}

/// Strength table over a nested chain plus the `q_max` decision. The scan
/// stops at the first failing order; later orders are still evaluated and
/// reported as diagnostics.
pub fn q_max(
    transforms: &[&TransformMatrix],
    d_a1: &ArrayView1<f64>,
    f_hat: &ArrayView1<f64>,
    alpha0: f64,
    l: usize,
    seed: u64,
) -> Result<(QMaxOutcome, Vec<StrengthResult>)> {
    if transforms.is_empty() {
        return Err(TsciError::Config("empty violation chain".into()));
    }
    if l < 50 {
        return Err(TsciError::Config(
            "need at least 50 bootstrap replications".into(),
        ));
    }
    if !(alpha0 > 0.0 && alpha0 < 0.5) {
        return Err(TsciError::Config("alpha0 must be in (0, 0.5)".into()));
    }
    let stats = bootstrap_stats(transforms, d_a1, f_hat, l, seed)?;
    let mut table = Vec::with_capacity(transforms.len());
    for (m, s) in transforms.iter().zip(stats.iter()) {
        let mu = mu_hat(d_a1, f_hat, m)?;
        let s_quantile = upper_empirical_quantile(s, alpha0);
        let threshold = (2.0 * m.trace()).max(10.0);
        table.push(StrengthResult {
            q: m.order(),
            mu_hat: mu,
            threshold,
            s_quantile,
            passed: mu >= threshold + s_quantile,
            bootstrap_reps: l,
        });
    }
    let outcome = if !table[0].passed {
        QMaxOutcome::WeakIv
    } else {
        let consecutive = table.iter().take_while(|r| r.passed).count();
        QMaxOutcome::Strong {
            q_max: consecutive - 1,
        }
    };
    Ok((outcome, table))
}
