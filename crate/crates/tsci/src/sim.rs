//! Data generators for the simulation designs and the replication engine
//! computing coverage, bias, interval length, and invalidity tables.

use crate::data::{build_w, Dataset, WMode};
use crate::error::{Result, TsciError};
use crate::estimator::tsls;
use crate::forest::{full_sample_weights, ForestParams};
use crate::norm::phi;
use crate::pipeline::{
    fit_init_baseline, fit_plug_ee, fit_single, prepare_split, run_prepared, FirstStage,
    PreparedSplit, TsciOptions,
};
use crate::rng::{derive_seed, stream_rng};
use crate::strength::mu_hat;
use crate::violation::{polynomial_chain, residual_projector, transform_matrix, ViolationChain};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const DATA_STREAM: u64 = 0x44415441;
const SPLIT_STREAM: u64 = 0x53504c54;

/// Simulation design. `vio = 0` generates a valid instrument (`h = 0`);
/// models 1 and 2 use a continuous instrument, model 3 a binary one, where
/// quadratic violations are indistinguishable from linear ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: u8,
    pub vio: u8,
    pub a: f64,
    pub n: usize,
    pub p: usize,
    pub error: u8,
    pub beta_true: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            model: 1,
            vio: 1,
            a: 0.0,
            n: 1000,
            p: 20,
            error: 1,
            beta_true: 1.0,
            reps: 200,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.model) {
            return Err(TsciError::Config("model must be 1, 2, or 3".into()));
        }
        if self.vio > 2 {
            return Err(TsciError::Config("violation index must be 0, 1, or 2".into()));
        }
        if self.model == 3 && self.vio == 2 {
            return Err(TsciError::Config(
                "model 3 has a binary instrument: quadratic violations only differ \
                 from linear ones by a constant"
                    .into(),
            ));
        }
        if !(1..=2).contains(&self.error) {
            return Err(TsciError::Config("error distribution must be 1 or 2".into()));
        }
        if self.n < 30 || self.p == 0 || self.reps == 0 {
            return Err(TsciError::Config("n >= 30, p >= 1, reps >= 1 required".into()));
        }
        Ok(())
    }

    pub fn binary_instrument(&self) -> bool {
        self.model == 3
    }

    /// The violation space that generates `h` exactly.
    pub fn oracle_q(&self) -> usize {
        self.vio as usize
    }
}

/// Correlated covariates and the instrument. The latent vector follows an
/// AR(1) chain with coefficient 0.5 (equivalently covariance
/// `0.5^|i-j|`), covariates are its probit transforms, and the instrument
/// comes from the extra coordinate: `4(phi - 0.5)` when continuous,
/// `1[phi > 0.6]` when binary.
pub fn gen_covariates(
    n: usize,
    p: usize,
    binary: bool,
    rng: &mut impl Rng,
) -> (Array2<f64>, Array1<f64>) {
    let mut x = Array2::zeros((n, p));
    let mut z = Array1::zeros(n);
    let rho = 0.5f64;
    let innov = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        let mut latent: f64 = StandardNormal.sample(rng);
        for j in 0..=p {
            if j > 0 {
                let e: f64 = StandardNormal.sample(rng);
                latent = rho * latent + innov * e;
            }
            let u = phi(latent);
            if j < p {
                x[[i, j]] = u;
            } else {
                z[i] = if binary {
                    f64::from(u > 0.6)
                } else {
                    4.0 * (u - 0.5)
                };
            }
        }
    }
    (x, z)
}

/// Conditional treatment mean for the three designs.
pub fn gen_mean(model: u8, a: f64, z: f64, x_row: &[f64]) -> f64 {
    let inter: f64 = x_row.iter().take(5).sum::<f64>() * a * z;
    let lin: f64 = x_row.iter().map(|v| 0.3 * v).sum();
    match model {
        1 => -25.0 / 12.0 + z + z * z + z.powi(4) / 8.0 + inter - lin,
        2 => {
            let t = 2.0 * std::f64::consts::PI * z;
            t.sin() + 1.5 * t.cos() + inter - lin
        }
        3 => z * (1.0 + a * x_row.iter().take(5).sum::<f64>()) - lin,
        _ => unreachable!("validated model index"),
    }
}

/// Violation function `h(z)`.
pub fn violation_h(vio: u8, z: f64) -> f64 {
    match vio {
        0 => 0.0,
        1 => z,
        2 => z + z * z - 1.0,
        _ => unreachable!("validated violation index"),
    }
}

pub const HETERO_KAPPA: f64 = 0.6;
const HETERO_W1: f64 = 1.38072;
const HETERO_W2: f64 = 0.86 * 0.86;

/// Error pair `(delta, eps)`. Distribution 1 is homoscedastic Gaussian with
/// covariance 0.5; distribution 2 makes the treatment error variance depend
/// on the instrument and mixes two scales into the outcome error.
pub fn gen_errors(error: u8, z: &Array1<f64>, rng: &mut impl Rng) -> (Array1<f64>, Array1<f64>) {
    let n = z.len();
    let mut delta = Array1::zeros(n);
    let mut eps = Array1::zeros(n);
    match error {
        1 => {
            for i in 0..n {
                let u1: f64 = StandardNormal.sample(rng);
                let u2: f64 = StandardNormal.sample(rng);
                delta[i] = u1;
                eps[i] = 0.5 * u1 + (0.75f64).sqrt() * u2;
            }
        }
        2 => {
            let scale = ((1.0 - HETERO_KAPPA * HETERO_KAPPA)
                / (HETERO_W2 * HETERO_W2 + HETERO_W1 * HETERO_W1))
                .sqrt();
            for i in 0..n {
                let sd = (z[i] * z[i] + 0.25).sqrt();
                let d: f64 = StandardNormal.sample(rng);
                let t1: f64 = StandardNormal.sample(rng);
                let t2: f64 = StandardNormal.sample(rng);
                delta[i] = sd * d;
                eps[i] = HETERO_KAPPA * delta[i] + scale * (HETERO_W1 * sd * t1 + HETERO_W2 * t2);
            }
        }
        _ => unreachable!("validated error index"),
    }
    (delta, eps)
}

/// One generated replicate: the observable dataset plus the pieces needed for
/// bookkeeping checks.
pub struct SimDraw {
    pub dataset: Dataset,
    pub f_values: Array1<f64>,
    pub eps: Array1<f64>,
    pub delta: Array1<f64>,
}

pub fn gen_dataset(config: &SimConfig, rep_seed: u64) -> SimDraw {
    let mut rng = stream_rng(rep_seed, DATA_STREAM);
    let (x, z) = gen_covariates(config.n, config.p, config.binary_instrument(), &mut rng);
    let (delta, eps) = gen_errors(config.error, &z, &mut rng);
    let mut f_values = Array1::zeros(config.n);
    let mut d = Array1::zeros(config.n);
    let mut y = Array1::zeros(config.n);
    for i in 0..config.n {
        let x_row: Vec<f64> = x.row(i).to_vec();
        f_values[i] = gen_mean(config.model, config.a, z[i], &x_row);
        d[i] = f_values[i] + delta[i];
        let x_sum: f64 = x_row.iter().sum();
        y[i] = d[i] * config.beta_true + violation_h(config.vio, z[i]) + 0.2 * x_sum + eps[i];
    }
    let z2 = z.insert_axis(ndarray::Axis(1));
    SimDraw {
        dataset: Dataset::new(y, d, z2, x).expect("generated data is finite"),
        f_values,
        eps,
        delta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimEstimator {
    TsciRfOracle,
    TsciRfComp,
    TsciRfRobust,
    TsciBaOracle,
    TsciBaComp,
    TsciBaRobust,
    Tsls,
    RfInit,
    RfPlug,
    RfFull,
}

impl SimEstimator {
    pub fn label(&self) -> &'static str {
        match self {
            SimEstimator::TsciRfOracle => "tsci_rf_oracle",
            SimEstimator::TsciRfComp => "tsci_rf_comp",
            SimEstimator::TsciRfRobust => "tsci_rf_robust",
            SimEstimator::TsciBaOracle => "tsci_ba_oracle",
            SimEstimator::TsciBaComp => "tsci_ba_comp",
            SimEstimator::TsciBaRobust => "tsci_ba_robust",
            SimEstimator::Tsls => "tsls",
            SimEstimator::RfInit => "rf_init",
            SimEstimator::RfPlug => "rf_plug",
            SimEstimator::RfFull => "rf_full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tsci_rf_oracle" => Some(Self::TsciRfOracle),
            "tsci_rf_comp" => Some(Self::TsciRfComp),
            "tsci_rf_robust" => Some(Self::TsciRfRobust),
            "tsci_ba_oracle" => Some(Self::TsciBaOracle),
            "tsci_ba_comp" => Some(Self::TsciBaComp),
            "tsci_ba_robust" => Some(Self::TsciBaRobust),
            "tsls" => Some(Self::Tsls),
            "rf_init" => Some(Self::RfInit),
            "rf_plug" => Some(Self::RfPlug),
            "rf_full" => Some(Self::RfFull),
        _ => None,
        }
    }

    fn needs_rf_split(&self) -> bool {
        matches!(
            self,
            Self::TsciRfOracle | Self::TsciRfComp | Self::TsciRfRobust | Self::RfInit | Self::RfPlug
        )
    }

    fn needs_rf_selection(&self) -> bool {
        matches!(self, Self::TsciRfComp | Self::TsciRfRobust)
    }

    fn needs_ba(&self) -> bool {
        matches!(self, Self::TsciBaOracle | Self::TsciBaComp | Self::TsciBaRobust)
    }

    fn needs_ba_selection(&self) -> bool {
        matches!(self, Self::TsciBaComp | Self::TsciBaRobust)
    }
}

/// Runtime knobs for the replication engine.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub estimators: Vec<SimEstimator>,
    pub forest: ForestParams,
    pub q_cap: usize,
    pub alpha: f64,
    pub alpha0: f64,
    pub boot_reps: usize,
    /// Polynomial degree of the basis-approximation first stage.
    pub ba_degree: usize,
}

impl Default for SimRun {
    fn default() -> Self {
        Self {
            estimators: vec![SimEstimator::TsciRfOracle, SimEstimator::TsciRfComp],
            forest: ForestParams::default(),
            q_cap: 3,
            alpha: 0.05,
            alpha0: 0.025,
            boot_reps: 300,
            ba_degree: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub coverage: f64,
    pub mean_abs_bias: f64,
    pub mean_ci_length: f64,
    pub reps_used: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub config: SimConfig,
    pub estimators: Vec<EstimatorSummary>,
    /// Fraction of replicates flagging the instrument invalid (random-forest
    /// selection path).
    pub invalidity_rate: Option<f64>,
    pub weak_iv_rate: Option<f64>,
    /// Mean generalized strength per violation order (random-forest stage).
    pub mean_mu_by_q: Vec<f64>,
    pub mu_reps: usize,
}

struct RepRecord {
    // per estimator: (beta, ci_lo, ci_hi) or failure
    fits: Vec<Option<(f64, f64, f64)>>,
    failures: Vec<bool>,
    invalid: Option<bool>,
    weak: Option<bool>,
    mu_by_q: Vec<f64>,
}

fn record_fit(
    rec: &mut RepRecord,
    idx: usize,
    result: std::result::Result<(f64, f64, f64), TsciError>,
) {
    match result {
        Ok(t) => rec.fits[idx] = Some(t),
        Err(_) => rec.failures[idx] = true,
    }
}

fn replicate(config: &SimConfig, run: &SimRun, rep: usize) -> RepRecord {
    let rep_seed = derive_seed(config.seed, rep as u64);
    let draw = gen_dataset(config, rep_seed);
    let data = &draw.dataset;
    let w = build_w(&data.x.view(), WMode::Linear).expect("finite covariates");
    let chain = polynomial_chain(&data.z.view(), run.q_cap, &w);
    let oracle_q = config.oracle_q().min(chain.max_order());

    let k = run.estimators.len();
    let mut rec = RepRecord {
        fits: vec![None; k],
        failures: vec![false; k],
        invalid: None,
        weak: None,
        mu_by_q: Vec::new(),
    };

    let needs_rf = run.estimators.iter().any(|e| e.needs_rf_split());
    let needs_rf_sel = run.estimators.iter().any(|e| e.needs_rf_selection());
    let split_seed = derive_seed(rep_seed, SPLIT_STREAM);

    let mut rf_prepared: Option<PreparedSplit> = None;
    if needs_rf {
        let stage = FirstStage::RandomForest(run.forest.clone());
        match prepare_split(data, &w, &chain, &stage, split_seed) {
            Ok(p) => {
                rec.mu_by_q = p
                    .transforms
                    .iter()
                    .map(|m| {
                        mu_hat(&p.d_a1.view(), &p.f_hat.view(), m).unwrap_or(f64::NAN)
                    })
                    .collect();
                rf_prepared = Some(p);
            }
            Err(_) => {
                for (i, e) in run.estimators.iter().enumerate() {
                    if e.needs_rf_split() {
                        rec.failures[i] = true;
                    }
                }
            }
        }
    }

    // selection path reuses the prepared split
    let mut rf_selection: Option<crate::pipeline::SplitOutcome> = None;
    if needs_rf_sel {
        if let Some(p) = &rf_prepared {
            let opts = TsciOptions {
                stage: FirstStage::RandomForest(run.forest.clone()),
                alpha: run.alpha,
                alpha0: run.alpha0,
                boot_reps: run.boot_reps,
                homoscedastic: false,
            };
            match run_prepared(p, &opts, split_seed) {
                Ok(out) => {
                    rec.invalid = Some(out.invalid_iv);
                    rec.weak = Some(out.weak_iv);
                    rf_selection = Some(out);
                }
                Err(_) => {
                    for (i, e) in run.estimators.iter().enumerate() {
                        if e.needs_rf_selection() {
                            rec.failures[i] = true;
                        }
                    }
                }
            }
        }
    }

    let mut ba_prepared: Option<PreparedSplit> = None;
    let mut ba_selection: Option<crate::pipeline::SplitOutcome> = None;
    if run.estimators.iter().any(|e| e.needs_ba()) {
        let stage = FirstStage::Basis {
            degree: run.ba_degree,
        };
        match prepare_split(data, &w, &chain, &stage, split_seed) {
            Ok(p) => ba_prepared = Some(p),
            Err(_) => {
                for (i, e) in run.estimators.iter().enumerate() {
                    if e.needs_ba() {
                        rec.failures[i] = true;
                    }
                }
            }
        }
        if run.estimators.iter().any(|e| e.needs_ba_selection()) {
            if let Some(p) = &ba_prepared {
                let opts = TsciOptions {
                    stage,
                    alpha: run.alpha,
                    alpha0: run.alpha0,
                    boot_reps: run.boot_reps,
                    homoscedastic: false,
                };
                if let Ok(out) = run_prepared(p, &opts, split_seed) {
                    ba_selection = Some(out);
                }
            }
        }
    }

    for (i, est) in run.estimators.iter().enumerate() {
        match est {
            SimEstimator::TsciRfOracle => {
                if let Some(p) = &rf_prepared {
                    record_fit(
                        &mut rec,
                        i,
                        fit_single(p, oracle_q, run.alpha, false)
                            .map(|f| (f.beta, f.ci_lo, f.ci_hi)),
                    );
                }
            }
            SimEstimator::TsciRfComp => {
                if let Some(out) = &rf_selection {
                    let f = &out.fit_comp;
                    rec.fits[i] = Some((f.beta, f.ci_lo, f.ci_hi));
                }
            }
            SimEstimator::TsciRfRobust => {
                if let Some(out) = &rf_selection {
                    let f = &out.fit_robust;
                    rec.fits[i] = Some((f.beta, f.ci_lo, f.ci_hi));
                }
            }
            SimEstimator::TsciBaOracle => {
                if let Some(p) = &ba_prepared {
                    record_fit(
                        &mut rec,
                        i,
                        fit_single(p, oracle_q, run.alpha, false)
                            .map(|f| (f.beta, f.ci_lo, f.ci_hi)),
                    );
                }
            }
            SimEstimator::TsciBaComp => {
                if let Some(out) = &ba_selection {
                    let f = &out.fit_comp;
                    rec.fits[i] = Some((f.beta, f.ci_lo, f.ci_hi));
                }
            }
            SimEstimator::TsciBaRobust => {
                if let Some(out) = &ba_selection {
                    let f = &out.fit_robust;
                    rec.fits[i] = Some((f.beta, f.ci_lo, f.ci_hi));
                }
            }
            SimEstimator::Tsls => {
                record_fit(
                    &mut rec,
                    i,
                    tsls(
                        &data.y.view(),
                        &data.d.view(),
                        &data.z.view(),
                        &data.x.view(),
                    )
                    .map(|f| {
                        let (lo, hi) =
                            crate::estimator::confidence_interval(f.beta, f.se, run.alpha);
                        (f.beta, lo, hi)
                    }),
                );
            }
            SimEstimator::RfInit => {
                if let Some(p) = &rf_prepared {
                    record_fit(
                        &mut rec,
                        i,
                        fit_init_baseline(p, oracle_q, run.alpha)
                            .map(|f| (f.beta, f.ci_lo, f.ci_hi)),
                    );
                }
            }
            SimEstimator::RfPlug => {
                if let Some(p) = &rf_prepared {
                    record_fit(
                        &mut rec,
                        i,
                        fit_plug_ee(p, oracle_q).map(|f| {
                            let (lo, hi) = crate::estimator::confidence_interval(
                                f.beta_plug,
                                f.se_plug,
                                run.alpha,
                            );
                            (f.beta_plug, lo, hi)
                        }),
                    );
                }
            }
            SimEstimator::RfFull => {
                record_fit(&mut rec, i, rf_full_fit(data, &w, &chain, oracle_q, run, rep_seed));
            }
        }
    }
    rec
}

fn rf_full_fit(
    data: &Dataset,
    w: &crate::data::CovariateBasis,
    chain: &ViolationChain,
    oracle_q: usize,
    run: &SimRun,
    rep_seed: u64,
) -> std::result::Result<(f64, f64, f64), TsciError> {
    let features = data.features();
    let mut params = run.forest.clone();
    params.seed = derive_seed(rep_seed, 0x46554c4c); // "FULL"
    let (_, omega) = full_sample_weights(&features.view(), &data.d.view(), &params)?;
    let vb = chain.basis(oracle_q);
    let split = crate::data::SplitIndex::full(data.n());
    let m_full = transform_matrix(&omega, vb, w, &split)?;
    let proj = residual_projector(&vb.v.view(), &w.w.view())?;
    let fit = crate::estimator::full_sample_estimator(
        &data.y.view(),
        &data.d.view(),
        &m_full,
        &proj,
    )?;
    let (lo, hi) = crate::estimator::confidence_interval(fit.beta, fit.se, run.alpha);
    Ok((fit.beta, lo, hi))
}

/// Run the replication study; replicates are independent and evaluated in
/// parallel, the reduction is sequential in replicate order.
pub fn run_replications(config: &SimConfig, run: &SimRun) -> Result<SimSummary> {
    config.validate()?;
    let records: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|rep| replicate(config, run, rep))
        .collect();

    let k = run.estimators.len();
    let mut estimators = Vec::with_capacity(k);
    for (i, est) in run.estimators.iter().enumerate() {
        let mut used = 0usize;
        let mut failures = 0usize;
        let mut covered = 0usize;
        let mut abs_bias = 0.0;
        let mut length = 0.0;
        for rec in &records {
            if rec.failures[i] {
                failures += 1;
                continue;
            }
            if let Some((beta, lo, hi)) = rec.fits[i] {
                used += 1;
                if lo <= config.beta_true && config.beta_true <= hi {
                    covered += 1;
                }
                abs_bias += (beta - config.beta_true).abs();
                length += hi - lo;
            }
        }
        estimators.push(EstimatorSummary {
            estimator: est.label().to_string(),
            coverage: if used > 0 { covered as f64 / used as f64 } else { f64::NAN },
            mean_abs_bias: if used > 0 { abs_bias / used as f64 } else { f64::NAN },
            mean_ci_length: if used > 0 { length / used as f64 } else { f64::NAN },
            reps_used: used,
            failures,
        });
    }

    let invalid_flags: Vec<bool> = records.iter().filter_map(|r| r.invalid).collect();
    let weak_flags: Vec<bool> = records.iter().filter_map(|r| r.weak).collect();
    let invalidity_rate = if invalid_flags.is_empty() {
        None
    } else {
        Some(invalid_flags.iter().filter(|&&b| b).count() as f64 / invalid_flags.len() as f64)
    };
    let weak_iv_rate = if weak_flags.is_empty() {
        None
    } else {
        Some(weak_flags.iter().filter(|&&b| b).count() as f64 / weak_flags.len() as f64)
    };

    let max_q = records.iter().map(|r| r.mu_by_q.len()).max().unwrap_or(0);
    let mut mean_mu_by_q = vec![0.0f64; max_q];
    let mut mu_counts = vec![0usize; max_q];
    for rec in &records {
        for (q, &mu) in rec.mu_by_q.iter().enumerate() {
            if mu.is_finite() {
                mean_mu_by_q[q] += mu;
                mu_counts[q] += 1;
            }
        }
    }
    for (m, c) in mean_mu_by_q.iter_mut().zip(mu_counts.iter()) {
        *m = if *c > 0 { *m / *c as f64 } else { f64::NAN };
    }
    let mu_reps = mu_counts.first().copied().unwrap_or(0);

    Ok(SimSummary {
        config: config.clone(),
        estimators,
        invalidity_rate,
        weak_iv_rate,
        mean_mu_by_q,
        mu_reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn continuous_instrument_range_and_binary_share() {
        let mut rng = stream_rng(1, 0);
        let (x, z) = gen_covariates(20000, 3, false, &mut rng);
        assert!(z.iter().all(|&v| v > -2.0 && v < 2.0));
        assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));

        let (_, zb) = gen_covariates(20000, 3, true, &mut rng);
        let share = zb.sum() / 20000.0;
        assert_abs_diff_eq!(share, 0.4, epsilon = 0.02);
    }

    #[test]
    fn latent_correlation_is_half() {
        // correlation of successive latent coordinates; recover them through
        // the inverse probit of the covariates
        let mut rng = stream_rng(2, 0);
        let n = 20000;
        let (x, _) = gen_covariates(n, 2, false, &mut rng);
        let u1: Vec<f64> = x.column(0).iter().map(|&v| crate::norm::inv_phi(v)).collect();
        let u2: Vec<f64> = x.column(1).iter().map(|&v| crate::norm::inv_phi(v)).collect();
        let m1 = u1.iter().sum::<f64>() / n as f64;
        let m2 = u2.iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut v1 = 0.0;
        let mut v2 = 0.0;
        for i in 0..n {
            cov += (u1[i] - m1) * (u2[i] - m2);
            v1 += (u1[i] - m1) * (u1[i] - m1);
            v2 += (u2[i] - m2) * (u2[i] - m2);
        }
        let corr = cov / (v1.sqrt() * v2.sqrt());
        assert_abs_diff_eq!(corr, 0.5, epsilon = 0.03);
    }

    #[test]
    fn mean_models_at_origin() {
        let zeros = vec![0.0; 20];
        assert_abs_diff_eq!(gen_mean(1, 0.0, 0.0, &zeros), -25.0 / 12.0, epsilon = 1e-14);
        assert_abs_diff_eq!(gen_mean(2, 0.0, 0.0, &zeros), 1.5, epsilon = 1e-14);
        let ones = vec![0.5; 20];
        assert_abs_diff_eq!(
            gen_mean(3, 7.0, 0.0, &ones),
            -0.3 * 10.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn violation_forms() {
        assert_eq!(violation_h(0, 1.7), 0.0);
        assert_eq!(violation_h(1, 1.7), 1.7);
        assert_abs_diff_eq!(violation_h(2, 1.7), 1.7 + 1.7 * 1.7 - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn error_one_correlation() {
        let mut rng = stream_rng(3, 0);
        let z = Array1::zeros(100_000);
        let (delta, eps) = gen_errors(1, &z, &mut rng);
        let n = z.len() as f64;
        let md = delta.sum() / n;
        let me = eps.sum() / n;
        let mut cov = 0.0;
        let mut vd = 0.0;
        let mut ve = 0.0;
        for i in 0..z.len() {
            cov += (delta[i] - md) * (eps[i] - me);
            vd += (delta[i] - md) * (delta[i] - md);
            ve += (eps[i] - me) * (eps[i] - me);
        }
        assert_abs_diff_eq!(cov / (vd.sqrt() * ve.sqrt()), 0.5, epsilon = 0.03);
    }

    #[test]
    fn error_two_conditional_moments() {
        // at fixed z, Var(delta) = z² + 0.25 and the closed-form correlation
        // corr(z) = kappa·sqrt(v)/sqrt(c1·v + c0) with v = z² + 0.25
        let scale_sq = (1.0 - HETERO_KAPPA * HETERO_KAPPA)
            / (HETERO_W2 * HETERO_W2 + HETERO_W1 * HETERO_W1);
        let c1 = HETERO_KAPPA * HETERO_KAPPA + scale_sq * HETERO_W1 * HETERO_W1;
        let c0 = scale_sq * HETERO_W2 * HETERO_W2;
        let mut rng = stream_rng(4, 0);
        for &zv in &[0.0, 1.0, -1.5] {
            let z = Array1::from_elem(60_000, zv);
            let (delta, eps) = gen_errors(2, &z, &mut rng);
            let v = zv * zv + 0.25;
            let n = z.len() as f64;
            let var_d = delta.iter().map(|x| x * x).sum::<f64>() / n;
            assert_abs_diff_eq!(var_d, v, epsilon = 0.04 * v.max(1.0));
            let mut cov = 0.0;
            let mut ve = 0.0;
            for i in 0..z.len() {
                cov += delta[i] * eps[i];
                ve += eps[i] * eps[i];
            }
            cov /= n;
            ve /= n;
            let corr = cov / (var_d.sqrt() * ve.sqrt());
            let target = HETERO_KAPPA * v.sqrt() / (c1 * v + c0).sqrt();
            assert_abs_diff_eq!(corr, target, epsilon = 0.03);
            // variance of eps standardizes to 1 at v = 1
            if (v - 1.0).abs() < 1e-12 {
                assert_abs_diff_eq!(ve, 1.0, epsilon = 0.04);
            }
        }
    }

    #[test]
    fn generated_outcome_recomputes_exactly() {
        let config = SimConfig {
            n: 200,
            reps: 1,
            ..Default::default()
        };
        let draw = gen_dataset(&config, 99);
        for i in 0..config.n {
            let x_sum: f64 = draw.dataset.x.row(i).sum();
            let y = draw.dataset.d[i] * config.beta_true
                + violation_h(config.vio, draw.dataset.z[[i, 0]])
                + 0.2 * x_sum
                + draw.eps[i];
            assert_abs_diff_eq!(y, draw.dataset.y[i], epsilon = 1e-12);
            assert_abs_diff_eq!(
                draw.dataset.d[i],
                draw.f_values[i] + draw.delta[i],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn single_replicate_summary_is_deterministic() {
        let config = SimConfig {
            n: 120,
            reps: 1,
            seed: 7,
            ..Default::default()
        };
        let run = SimRun {
            estimators: vec![SimEstimator::Tsls],
            forest: ForestParams {
                num_trees: 10,
                ..Default::default()
            },
            boot_reps: 60,
            ..Default::default()
        };
        let s1 = run_replications(&config, &run).unwrap();
        let s2 = run_replications(&config, &run).unwrap();
        assert_eq!(
            s1.estimators[0].mean_abs_bias.to_bits(),
            s2.estimators[0].mean_abs_bias.to_bits()
        );
    }
}
