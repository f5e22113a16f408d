//! End-to-end drivers: prepare one split, fit estimators at a violation
//! order, run strength scanning plus selection, and aggregate across splits.

use crate::aggregate::{aggregate, MultiSplitResult, DEFAULT_GRID_POINTS};
use crate::basis::basis_omega;
use crate::boost::{boosting_omega, BoostingConfig};
use crate::data::{
    select_entries, select_rows, split_sample, CovariateBasis, Dataset, SplitIndex,
};
use crate::error::{Result, TsciError};
use crate::estimator::{
    beta_corrected_hetero, beta_corrected_homo, beta_init, confidence_interval, cov_hat,
    plug_ee_estimators, residual_eps, se_hetero, se_homo, CorrectionKind, PlugEeFit, SeKind,
    TsciFit,
};
use crate::forest::{fit_forest, forest_weights, ForestParams};
use crate::linalg::ResidualProjector;
use crate::rng::derive_seed;
use crate::selection::{select, SelectionReport};
use crate::strength::{mu_hat, q_max, QMaxOutcome, StrengthResult};
use crate::violation::{residual_projector, transform_matrix, TransformMatrix, ViolationChain};
use crate::weights::WeightMatrix;
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const FOREST_STREAM: u64 = 0x464f5245;
const STRENGTH_STREAM: u64 = 0x53545247;
const COMPARE_STREAM: u64 = 0x434d5052;

#[derive(Debug, Clone)]
pub enum FirstStage {
    RandomForest(ForestParams),
    /// Polynomial basis projector of this degree; no sample split.
    Basis { degree: usize },
    Boosting(BoostingConfig),
}

impl FirstStage {
    pub fn needs_split(&self) -> bool {
        !matches!(self, FirstStage::Basis { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            FirstStage::RandomForest(_) => "rf",
            FirstStage::Basis { .. } => "basis",
            FirstStage::Boosting(_) => "boost",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsciOptions {
    pub stage: FirstStage,
    pub alpha: f64,
    pub alpha0: f64,
    pub boot_reps: usize,
    /// Use the trace-based homoscedastic correction and standard error
    /// instead of the robust diagonal form.
    pub homoscedastic: bool,
}

impl Default for TsciOptions {
    fn default() -> Self {
        Self {
            stage: FirstStage::RandomForest(ForestParams::default()),
            alpha: 0.05,
            alpha0: 0.025,
            boot_reps: 300,
            homoscedastic: false,
        }
    }
}

/// Everything derived from one sample split that the second stage consumes.
pub struct PreparedSplit {
    pub split: SplitIndex,
    pub omega: WeightMatrix,
    pub y_a1: Array1<f64>,
    pub d_a1: Array1<f64>,
    pub f_hat: Array1<f64>,
    pub transforms: Vec<TransformMatrix>,
    pub projectors: Vec<ResidualProjector>,
}

impl PreparedSplit {
    pub fn max_order(&self) -> usize {
        self.transforms.len() - 1
    }

    pub fn delta_hat(&self) -> Array1<f64> {
        &self.d_a1 - &self.f_hat
    }
}

/// Fit the first stage and assemble transforms for the whole chain.
pub fn prepare_split(
    data: &Dataset,
    w: &CovariateBasis,
    chain: &ViolationChain,
    stage: &FirstStage,
    split_seed: u64,
) -> Result<PreparedSplit> {
    let n = data.n();
    let features = data.features();

    let (split, omega) = match stage {
        FirstStage::RandomForest(params) => {
            let split = split_sample(n, split_seed)?;
            let f_a2 = select_rows(&features.view(), &split.a2);
            let d_a2 = select_entries(&data.d.view(), &split.a2);
            let mut params = params.clone();
            params.seed = derive_seed(split_seed, FOREST_STREAM);
            let forest = fit_forest(&f_a2.view(), &d_a2.view(), &params)?;
            let f_a1 = select_rows(&features.view(), &split.a1);
            (split, forest_weights(&forest, &f_a1.view()))
        }
        FirstStage::Basis { degree } => {
            let split = SplitIndex::full(n);
            (split, basis_omega(&data.z.view(), w, *degree)?)
        }
        FirstStage::Boosting(config) => {
            let split = split_sample(n, split_seed)?;
            let f_a2 = select_rows(&features.view(), &split.a2);
            let d_a2 = select_entries(&data.d.view(), &split.a2);
            let f_a1 = select_rows(&features.view(), &split.a1);
            let d_a1 = select_entries(&data.d.view(), &split.a1);
            let (omega, _diag) = boosting_omega(
                &f_a2.view(),
                &d_a2.view(),
                &f_a1.view(),
                &d_a1.view(),
                config,
            )?;
            (split, omega)
        }
    };

    let y_a1 = select_entries(&data.y.view(), &split.a1);
    let d_a1 = select_entries(&data.d.view(), &split.a1);
    let f_hat = omega.apply(&d_a1.view());

    let mut transforms = Vec::with_capacity(chain.bases.len());
    let mut projectors = Vec::with_capacity(chain.bases.len());
    for vb in &chain.bases {
        transforms.push(transform_matrix(&omega, vb, w, &split)?);
        let v_a1 = vb.rows(&split.a1);
        let w_a1 = w.rows(&split.a1);
        projectors.push(residual_projector(&v_a1.view(), &w_a1.view())?);
    }

    Ok(PreparedSplit {
        split,
        omega,
        y_a1,
        d_a1,
        f_hat,
        transforms,
        projectors,
    })
}

fn mu_or_warning(p: &PreparedSplit, m: &TransformMatrix, warnings: &mut Vec<String>) -> f64 {
    match mu_hat(&p.d_a1.view(), &p.f_hat.view(), m) {
        Ok(v) => v,
        Err(e) => {
            warnings.push(format!("IV strength undefined: {e}"));
            f64::NAN
        }
    }
}

/// Single-space fit at order `q`: robust diagonal correction with residuals
/// at the same `V` (or the trace correction under the homoscedastic option).
pub fn fit_single(p: &PreparedSplit, q: usize, alpha: f64, homoscedastic: bool) -> Result<TsciFit> {
    let m = &p.transforms[q];
    let proj = &p.projectors[q];
    let denom = m.quad(&p.d_a1.view(), &p.d_a1.view());
    let b_init = beta_init(&p.y_a1.view(), &p.d_a1.view(), m)?;
    let eps = residual_eps(&p.y_a1.view(), &p.d_a1.view(), b_init, proj);
    let delta = p.delta_hat();
    let mut warnings = Vec::new();

    let (beta, correction_kind) = if homoscedastic {
        let cov = cov_hat(
            &p.d_a1.view(),
            &p.f_hat.view(),
            &p.y_a1.view(),
            b_init,
            proj,
            m.rank_adjusted(),
        )?;
        (
            beta_corrected_homo(b_init, cov, m.trace(), denom)?,
            CorrectionKind::Homo,
        )
    } else {
        (
            beta_corrected_hetero(b_init, m, &delta.view(), &eps.view(), denom)?,
            CorrectionKind::Hetero,
        )
    };

    let (se, se_kind) = if homoscedastic {
        let (se, degenerate) = se_homo(
            eps.dot(&eps),
            m,
            &p.d_a1.view(),
            denom,
            p.split.n1(),
            m.rank_adjusted(),
        )?;
        if degenerate {
            warnings.push("degenerate inference: zero standard error".into());
        }
        (se, SeKind::Homo)
    } else {
        let (se, degenerate) = se_hetero(&eps.view(), m, &p.d_a1.view(), denom)?;
        if degenerate {
            warnings.push("degenerate inference: zero standard error".into());
        }
        (se, SeKind::Hetero)
    };

    let mu = mu_or_warning(p, m, &mut warnings);
    let (ci_lo, ci_hi) = confidence_interval(beta, se, alpha);
    Ok(TsciFit {
        q,
        beta_init: b_init,
        beta,
        correction_kind,
        se,
        se_kind,
        ci_lo,
        ci_hi,
        alpha,
        mu_hat: mu,
        trace_m: m.trace(),
        denom,
        warnings,
    })
}

/// Sequential fit used inside selection: diagonal correction with the
/// residuals taken at the largest adjustable space.
pub fn fit_sequential(
    p: &PreparedSplit,
    q: usize,
    eps_qmax: &Array1<f64>,
    alpha: f64,
) -> Result<TsciFit> {
    let m = &p.transforms[q];
    let denom = m.quad(&p.d_a1.view(), &p.d_a1.view());
    let b_init = beta_init(&p.y_a1.view(), &p.d_a1.view(), m)?;
    let delta = p.delta_hat();
    let beta = beta_corrected_hetero(b_init, m, &delta.view(), &eps_qmax.view(), denom)?;
    // interval width still uses the own-space residuals
    let eps_own = residual_eps(&p.y_a1.view(), &p.d_a1.view(), b_init, &p.projectors[q]);
    let mut warnings = Vec::new();
    let (se, degenerate) = se_hetero(&eps_own.view(), m, &p.d_a1.view(), denom)?;
    if degenerate {
        warnings.push("degenerate inference: zero standard error".into());
    }
    let mu = mu_or_warning(p, m, &mut warnings);
    let (ci_lo, ci_hi) = confidence_interval(beta, se, alpha);
    Ok(TsciFit {
        q,
        beta_init: b_init,
        beta,
        correction_kind: CorrectionKind::HeteroSeq,
        se,
        se_kind: SeKind::Hetero,
        ci_lo,
        ci_hi,
        alpha,
        mu_hat: mu,
        trace_m: m.trace(),
        denom,
        warnings,
    })
}

/// Uncorrected fit with the homoscedastic standard error (the "Init"
/// comparison estimator).
pub fn fit_init_baseline(p: &PreparedSplit, q: usize, alpha: f64) -> Result<TsciFit> {
    let m = &p.transforms[q];
    let proj = &p.projectors[q];
    let denom = m.quad(&p.d_a1.view(), &p.d_a1.view());
    let b_init = beta_init(&p.y_a1.view(), &p.d_a1.view(), m)?;
    let eps = residual_eps(&p.y_a1.view(), &p.d_a1.view(), b_init, proj);
    let mut warnings = Vec::new();
    let (se, degenerate) = se_homo(
        eps.dot(&eps),
        m,
        &p.d_a1.view(),
        denom,
        p.split.n1(),
        m.rank_adjusted(),
    )?;
    if degenerate {
        warnings.push("degenerate inference: zero standard error".into());
    }
    let mu = mu_or_warning(p, m, &mut warnings);
    let (ci_lo, ci_hi) = confidence_interval(b_init, se, alpha);
    Ok(TsciFit {
        q,
        beta_init: b_init,
        beta: b_init,
        correction_kind: CorrectionKind::Homo,
        se,
        se_kind: SeKind::Homo,
        ci_lo,
        ci_hi,
        alpha,
        mu_hat: mu,
        trace_m: m.trace(),
        denom,
        warnings,
    })
}

/// Plug-in and estimating-equation baselines at order `q`.
pub fn fit_plug_ee(p: &PreparedSplit, q: usize) -> Result<PlugEeFit> {
    plug_ee_estimators(
        &p.y_a1.view(),
        &p.d_a1.view(),
        &p.f_hat.view(),
        &p.projectors[q],
    )
}

/// One split-estimate-select cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split_seed: u64,
    pub strength: Vec<StrengthResult>,
    /// `None` means the strength test already failed with no violation
    /// adjustment (weak IV).
    pub q_max: Option<usize>,
    pub selection: Option<SelectionReport>,
    pub fit_comp: TsciFit,
    pub fit_robust: TsciFit,
    pub invalid_iv: bool,
    pub weak_iv: bool,
}

pub fn run_split(
    data: &Dataset,
    w: &CovariateBasis,
    chain: &ViolationChain,
    opts: &TsciOptions,
    split_seed: u64,
) -> Result<SplitOutcome> {
    let p = prepare_split(data, w, chain, &opts.stage, split_seed)?;
    run_prepared(&p, opts, split_seed)
}

/// Strength scan, selection, and final fits on an already prepared split.
pub fn run_prepared(
    p: &PreparedSplit,
    opts: &TsciOptions,
    split_seed: u64,
) -> Result<SplitOutcome> {
    let refs: Vec<&TransformMatrix> = p.transforms.iter().collect();
    let (outcome, strength) = q_max(
        &refs,
        &p.d_a1.view(),
        &p.f_hat.view(),
        opts.alpha0,
        opts.boot_reps,
        derive_seed(split_seed, STRENGTH_STREAM),
    )?;

    match outcome {
        QMaxOutcome::WeakIv => {
            let mut fit = fit_single(p, 0, opts.alpha, opts.homoscedastic)?;
            fit.warnings.push(
                "weak IV: generalized strength test failed with no violation adjustment; \
                 null-space estimate reported"
                    .into(),
            );
            Ok(SplitOutcome {
                split_seed,
                strength,
                q_max: None,
                selection: None,
                fit_comp: fit.clone(),
                fit_robust: fit,
                invalid_iv: false,
                weak_iv: true,
            })
        }
        QMaxOutcome::Strong { q_max: qm } => {
            let m_qmax = &p.transforms[qm];
            let b_init_qmax = beta_init(&p.y_a1.view(), &p.d_a1.view(), m_qmax)?;
            let eps_qmax = residual_eps(
                &p.y_a1.view(),
                &p.d_a1.view(),
                b_init_qmax,
                &p.projectors[qm],
            );
            let seq_fits: Vec<TsciFit> = (0..=qm)
                .map(|q| fit_sequential(p, q, &eps_qmax, opts.alpha))
                .collect::<Result<_>>()?;
            let sel_refs: Vec<&TransformMatrix> = p.transforms[..=qm].iter().collect();
            let report = select(
                &sel_refs,
                seq_fits,
                &eps_qmax.view(),
                &p.d_a1.view(),
                opts.alpha0,
                opts.boot_reps,
                derive_seed(split_seed, COMPARE_STREAM),
            )?;
            let fit_comp = fit_single(p, report.q_c, opts.alpha, opts.homoscedastic)?;
            let fit_robust = if report.q_r == report.q_c {
                fit_comp.clone()
            } else {
                fit_single(p, report.q_r, opts.alpha, opts.homoscedastic)?
            };
            let invalid_iv = report.invalid_iv;
            Ok(SplitOutcome {
                split_seed,
                strength,
                q_max: Some(qm),
                selection: Some(report),
                fit_comp,
                fit_robust,
                invalid_iv,
                weak_iv: false,
            })
        }
    }
}

/// Multi-split inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSplitOutcome {
    pub splits: Vec<SplitOutcome>,
    pub agg_comp: MultiSplitResult,
    pub agg_robust: MultiSplitResult,
    pub invalidity_rate: f64,
    pub weak_iv_rate: f64,
}

pub fn run_multi(
    data: &Dataset,
    w: &CovariateBasis,
    chain: &ViolationChain,
    opts: &TsciOptions,
    master_seed: u64,
    n_splits: usize,
) -> Result<MultiSplitOutcome> {
    if n_splits == 0 {
        return Err(TsciError::Config("need at least one split".into()));
    }
    let splits: Vec<SplitOutcome> = (0..n_splits)
        .into_par_iter()
        .map(|s| run_split(data, w, chain, opts, derive_seed(master_seed, s as u64)))
        .collect::<Result<_>>()?;

    let betas_c: Vec<f64> = splits.iter().map(|s| s.fit_comp.beta).collect();
    let ses_c: Vec<f64> = splits.iter().map(|s| s.fit_comp.se).collect();
    let betas_r: Vec<f64> = splits.iter().map(|s| s.fit_robust.beta).collect();
    let ses_r: Vec<f64> = splits.iter().map(|s| s.fit_robust.se).collect();
    let agg_comp = aggregate(&betas_c, &ses_c, opts.alpha, DEFAULT_GRID_POINTS)?;
    let agg_robust = aggregate(&betas_r, &ses_r, opts.alpha, DEFAULT_GRID_POINTS)?;
    let invalidity_rate =
        splits.iter().filter(|s| s.invalid_iv).count() as f64 / n_splits as f64;
    let weak_iv_rate = splits.iter().filter(|s| s.weak_iv).count() as f64 / n_splits as f64;
    Ok(MultiSplitOutcome {
        splits,
        agg_comp,
        agg_robust,
        invalidity_rate,
        weak_iv_rate,
    })
}
