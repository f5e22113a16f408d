//! L2-boosting first stage expressed as a weighting matrix.
//!
//! Base learners are selected on the held-out rows and re-materialized as hat
//! matrices on the estimation rows; the smoother follows the recursion
//! `omega_m = nu*H_m + (I - nu*H_m) * omega_{m-1}` starting from zero.

use crate::error::{Result, TsciError};
use crate::forest::grow_single_tree;
use crate::rng::stream_rng;
use crate::weights::{WeightKind, WeightMatrix};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

#[derive(Debug, Clone)]
pub enum BoostBase {
    ComponentwiseLinear,
    DecisionTree { depth: usize, min_leaf: usize },
}

#[derive(Debug, Clone)]
pub struct BoostingConfig {
    /// Step-length factor in (0, 1].
    pub nu: f64,
    /// Number of boosting iterations.
    pub m_stop: usize,
    pub base: BoostBase,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self {
            nu: 0.1,
            m_stop: 100,
            base: BoostBase::ComponentwiseLinear,
        }
    }
}

impl BoostingConfig {
    pub fn tree_default() -> Self {
        Self {
            base: BoostBase::DecisionTree {
                depth: 2,
                min_leaf: 5,
            },
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(TsciError::Config("step length nu must be in (0, 1]".into()));
        }
        if self.m_stop == 0 {
            return Err(TsciError::Config("m_stop must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-run bookkeeping: effective iteration count (fewer than `m_stop` when
/// every remaining base learner is singular), the held-out residual-norm
/// path, selected columns for the linear base, and the incremental prediction
/// on the estimation rows, which must coincide with `omega * d`.
#[derive(Debug, Clone)]
pub struct BoostingDiagnostics {
    pub m_effective: usize,
    pub a2_residual_norms: Vec<f64>,
    pub selected_columns: Vec<usize>,
    pub f_a1_incremental: Array1<f64>,
}

/// Rank-one least-squares hat matrix onto a single column.
pub fn linear_base_hat(column: &ArrayView1<f64>) -> Result<Array2<f64>> {
    let norm_sq: f64 = column.iter().map(|v| v * v).sum();
    if norm_sq <= 0.0 {
        return Err(TsciError::NumericalDegeneracy(
            "zero-norm column in linear base learner".into(),
        ));
    }
    let n = column.len();
    let mut h = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            h[[i, j]] = column[i] * column[j] / norm_sq;
        }
    }
    Ok(h)
}

/// Row-stochastic leaf-averaging hat matrix from a leaf partition of `0..n`.
pub fn tree_base_hat(groups: &[Vec<usize>], n: usize) -> Result<Array2<f64>> {
    let covered: usize = groups.iter().map(|g| g.len()).sum();
    if covered != n {
        return Err(TsciError::NumericalDegeneracy(
            "leaf groups do not partition the rows".into(),
        ));
    }
    let mut h = Array2::zeros((n, n));
    for group in groups {
        if group.is_empty() {
            continue;
        }
        let w = 1.0 / group.len() as f64;
        for &i in group {
            for &j in group {
                h[[i, j]] = w;
            }
        }
    }
    Ok(h)
}

/// `omega += nu * H (I - omega)` for a rank-one hat `c cᵀ / |c|²`, plus the
/// matching update of the incremental prediction.
fn rank_one_update(
    omega: &mut Array2<f64>,
    f_a1: &mut Array1<f64>,
    d_a1: &ArrayView1<f64>,
    c: &ArrayView1<f64>,
    nu: f64,
) {
    let norm_sq: f64 = c.iter().map(|v| v * v).sum();
    let n = omega.nrows();
    // v = cᵀ (I - omega)
    let mut v = c.to_owned();
    let ct_omega = c.dot(omega);
    v -= &ct_omega;
    let scale = nu / norm_sq;
    for i in 0..n {
        let ci = c[i] * scale;
        if ci == 0.0 {
            continue;
        }
        let mut row = omega.row_mut(i);
        row.iter_mut().zip(v.iter()).for_each(|(o, &vj)| *o += ci * vj);
    }
    let resid_proj = c.dot(&(d_a1 - &*f_a1)) / norm_sq;
    for i in 0..n {
        f_a1[i] += nu * c[i] * resid_proj;
    }
}

/// `omega += nu * (H - H omega)` for a leaf-averaging hat, plus the matching
/// update of the incremental prediction.
fn leaf_update(
    omega: &mut Array2<f64>,
    f_a1: &mut Array1<f64>,
    d_a1: &ArrayView1<f64>,
    groups: &[Vec<usize>],
    nu: f64,
) {
    let n = omega.nrows();
    for group in groups {
        if group.is_empty() {
            continue;
        }
        let w = 1.0 / group.len() as f64;
        // mean of the omega rows and of the current residual over the leaf
        let mut mean_row = Array1::<f64>::zeros(n);
        let mut mean_resid = 0.0;
        for &i in group {
            mean_row += &omega.row(i);
            mean_resid += d_a1[i] - f_a1[i];
        }
        mean_row *= w;
        mean_resid *= w;
        for &i in group {
            let mut row = omega.row_mut(i);
            row.iter_mut()
                .zip(mean_row.iter())
                .for_each(|(o, &m)| *o -= nu * m);
            for &j in group {
                row[j] += nu * w;
            }
            f_a1[i] += nu * mean_resid;
        }
    }
}

/// Fit the boosting smoother: base learners chosen on `(features_a2, d_a2)`,
/// hat matrices rebuilt on `features_a1`.
pub fn boosting_omega(
    features_a2: &ArrayView2<f64>,
    d_a2: &ArrayView1<f64>,
    features_a1: &ArrayView2<f64>,
    d_a1: &ArrayView1<f64>,
    config: &BoostingConfig,
) -> Result<(WeightMatrix, BoostingDiagnostics)> {
    config.validate()?;
    let p = features_a2.ncols();
    if p != features_a1.ncols() {
        return Err(TsciError::Dimension(
            "feature counts differ between subsamples".into(),
        ));
    }
    if features_a2.nrows() != d_a2.len() || features_a1.nrows() != d_a1.len() {
        return Err(TsciError::Dimension("row counts differ".into()));
    }
    let n1 = features_a1.nrows();
    let mut omega = Array2::<f64>::zeros((n1, n1));
    let mut f_a1 = Array1::<f64>::zeros(n1);
    let mut f_a2 = Array1::<f64>::zeros(features_a2.nrows());
    let mut diag = BoostingDiagnostics {
        m_effective: 0,
        a2_residual_norms: Vec::with_capacity(config.m_stop),
        selected_columns: Vec::new(),
        f_a1_incremental: Array1::zeros(n1),
    };

    match &config.base {
        BoostBase::ComponentwiseLinear => {
            let norm_a2: Vec<f64> = (0..p)
                .map(|j| features_a2.column(j).iter().map(|v| v * v).sum())
                .collect();
            let norm_a1: Vec<f64> = (0..p)
                .map(|j| features_a1.column(j).iter().map(|v| v * v).sum())
                .collect();
            let valid: Vec<usize> = (0..p)
                .filter(|&j| norm_a2[j] > 1e-300 && norm_a1[j] > 1e-300)
                .collect();

            for _m in 0..config.m_stop {
                if valid.is_empty() {
                    break;
                }
                let u = d_a2 - &f_a2;
                let u_sq: f64 = u.iter().map(|v| v * v).sum();
                // residual SSE after projecting on column j
                let mut best: Option<(f64, usize, f64)> = None;
                for &j in &valid {
                    let proj = features_a2.column(j).dot(&u);
                    let sse = u_sq - proj * proj / norm_a2[j];
                    if best.is_none_or(|(b, _, _)| sse < b) {
                        best = Some((sse, j, proj));
                    }
                }
                let (_, j_hat, proj) = best.expect("non-empty candidate set");
                diag.selected_columns.push(j_hat);

                let coef = config.nu * proj / norm_a2[j_hat];
                f_a2
                    .iter_mut()
                    .zip(features_a2.column(j_hat).iter())
                    .for_each(|(f, &c)| *f += coef * c);
                rank_one_update(
                    &mut omega,
                    &mut f_a1,
                    d_a1,
                    &features_a1.column(j_hat),
                    config.nu,
                );
                diag.m_effective += 1;
                let resid: f64 = d_a2
                    .iter()
                    .zip(f_a2.iter())
                    .map(|(d, f)| (d - f) * (d - f))
                    .sum::<f64>()
                    .sqrt();
                diag.a2_residual_norms.push(resid);
            }
        }
        BoostBase::DecisionTree { depth, min_leaf } => {
            let rows: Vec<usize> = (0..features_a2.nrows()).collect();
            for m in 0..config.m_stop {
                let u = d_a2 - &f_a2;
                let mut rng = stream_rng(0x424f4f5354, m as u64); // "BOOST"
                let tree = grow_single_tree(
                    features_a2,
                    &u.view(),
                    rows.clone(),
                    *min_leaf,
                    Some(*depth),
                    p,
                    &mut rng,
                );
                // A2-side leaf means update the held-out fit
                let groups_a2 = tree.leaf_groups(features_a2);
                for group in &groups_a2 {
                    if group.is_empty() {
                        continue;
                    }
                    let mean = group.iter().map(|&i| u[i]).sum::<f64>() / group.len() as f64;
                    for &i in group {
                        f_a2[i] += config.nu * mean;
                    }
                }
                let groups_a1 = tree.leaf_groups(features_a1);
                leaf_update(&mut omega, &mut f_a1, d_a1, &groups_a1, config.nu);
                diag.m_effective += 1;
                let resid: f64 = d_a2
                    .iter()
                    .zip(f_a2.iter())
                    .map(|(d, f)| (d - f) * (d - f))
                    .sum::<f64>()
                    .sqrt();
                diag.a2_residual_norms.push(resid);
            }
        }
    }

    diag.f_a1_incremental = f_a1;
    Ok((
        WeightMatrix::dense(WeightKind::Boosting, omega),
        diag,
    ))
}
