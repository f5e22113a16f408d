//! Violation-space bases and the generalized transformation matrix
//! `M(V) = omegaᵀ P_perp(omega V, omega W) omega`.
//!
//! `M` is held in factored form. For a dense smoother, `M = omegaᵀomega - Kᵀ K`
//! with `K = Gᵀ omega` and `G` an orthonormal basis of the transformed span;
//! for a projector smoother `omega = Qb Qbᵀ`, `M = Qb S Qbᵀ` with a small
//! idempotent `S`. All second-stage quantities (quadratic forms, `M d`,
//! `diag(M)`, traces) come out of these factors without forming `M`, which
//! keeps repeated bootstrap evaluation cheap.

use crate::data::{select_rows, CovariateBasis, SplitIndex};
use crate::error::{Result, TsciError};
use crate::linalg::{orthonormal_basis, svd_rank, ResidualProjector};
use crate::weights::{WeightKind, WeightMatrix, WeightRepr};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use std::sync::Arc;

/// Basis of a violation space: column `j` is the `j`-th basis function of the
/// instruments evaluated row-wise. Order zero is the empty matrix.
#[derive(Debug, Clone)]
pub struct ViolationBasis {
    pub q: usize,
    pub v: Array2<f64>,
    /// Numerical column rank; lower than the column count when instrument
    /// values make basis functions coincide (binary instruments).
    pub rank: usize,
}

impl ViolationBasis {
    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        select_rows(&self.v.view(), idx)
    }
}

/// Monomials `z, z², ..., z^q` of a single instrument column.
pub fn polynomial_violation_basis(z: &ArrayView1<f64>, q: usize) -> ViolationBasis {
    let n = z.len();
    let mut v = Array2::zeros((n, q));
    for deg in 1..=q {
        v.column_mut(deg - 1)
            .iter_mut()
            .zip(z.iter())
            .for_each(|(dst, &val)| *dst = val.powi(deg as i32));
    }
    let rank = svd_rank(&v.view());
    ViolationBasis { q, v, rank }
}

/// Degree-`q` polynomial block over every instrument column: for each degree
/// `1..=q`, the columns `z_1^deg, ..., z_pz^deg`. Reduces to the single-column
/// basis when there is one instrument, and keeps the nested-prefix property.
pub fn polynomial_violation_basis_multi(z: &ArrayView2<f64>, q: usize) -> ViolationBasis {
    let n = z.nrows();
    let pz = z.ncols();
    let mut v = Array2::zeros((n, q * pz));
    for deg in 1..=q {
        for col in 0..pz {
            v.column_mut((deg - 1) * pz + col)
                .iter_mut()
                .zip(z.column(col).iter())
                .for_each(|(dst, &val)| *dst = val.powi(deg as i32));
        }
    }
    let rank = svd_rank(&v.view());
    ViolationBasis { q, v, rank }
}

/// Nested polynomial chain `V_0 ⊂ V_1 ⊂ ... ⊂ V_Q`.
///
/// Growth stops once a new degree adds no column rank beyond `[V_q | W]`,
/// which is what happens for binary instruments where higher powers repeat
/// existing columns; the capped order is recorded.
#[derive(Debug, Clone)]
pub struct ViolationChain {
    pub bases: Vec<ViolationBasis>,
    pub requested_cap: usize,
    pub truncated: bool,
}

impl ViolationChain {
    pub fn max_order(&self) -> usize {
        self.bases.len() - 1
    }

    pub fn basis(&self, q: usize) -> &ViolationBasis {
        &self.bases[q]
    }
}

pub fn polynomial_chain(
    z: &ArrayView2<f64>,
    q_cap: usize,
    w: &CovariateBasis,
) -> ViolationChain {
    let n = z.nrows();
    let mut bases = vec![ViolationBasis {
        q: 0,
        v: Array2::zeros((n, 0)),
        rank: 0,
    }];
    let mut prev_rank = w.rank;
    let mut truncated = false;
    for q in 1..=q_cap {
        let candidate = polynomial_violation_basis_multi(z, q);
        let mut joint = Array2::zeros((n, candidate.v.ncols() + w.p_w()));
        joint
            .slice_mut(s![.., ..candidate.v.ncols()])
            .assign(&candidate.v);
        joint.slice_mut(s![.., candidate.v.ncols()..]).assign(&w.w);
        let joint_rank = svd_rank(&joint.view());
        if joint_rank <= prev_rank {
            truncated = true;
            break;
        }
        prev_rank = joint_rank;
        bases.push(candidate);
    }
    ViolationChain {
        bases,
        requested_cap: q_cap,
        truncated,
    }
}

/// Annihilator of the untransformed `[V_A1 | W_A1]` span, used for residuals
/// and the covariance estimate.
pub fn residual_projector(
    v_a1: &ArrayView2<f64>,
    w_a1: &ArrayView2<f64>,
) -> Result<ResidualProjector> {
    let n1 = w_a1.nrows();
    if v_a1.nrows() != n1 {
        return Err(TsciError::Dimension(
            "violation and covariate rows differ".into(),
        ));
    }
    let mut joint = Array2::zeros((n1, v_a1.ncols() + w_a1.ncols()));
    joint.slice_mut(s![.., ..v_a1.ncols()]).assign(v_a1);
    joint.slice_mut(s![.., v_a1.ncols()..]).assign(w_a1);
    let proj = ResidualProjector::new(&joint.view());
    if proj.span_rank() >= n1 {
        return Err(TsciError::DegenerateProjection(format!(
            "span rank {} leaves no residual degrees of freedom in {} rows",
            proj.span_rank(),
            n1
        )));
    }
    Ok(proj)
}

#[derive(Debug, Clone)]
enum TmRepr {
    /// `M = omegaᵀ omega - Kᵀ K`
    Smoother {
        omega: Arc<Array2<f64>>,
        k: Array2<f64>,
    },
    /// `M = Qb S Qbᵀ` with idempotent `S`
    Projector {
        qb: Arc<Array2<f64>>,
        s: Array2<f64>,
    },
}

/// The generalized transformation matrix for one violation space.
#[derive(Debug, Clone)]
pub struct TransformMatrix {
    repr: TmRepr,
    kind: WeightKind,
    n1: usize,
    q_order: usize,
    trace_m: f64,
    diag: Array1<f64>,
    /// Rank of the untransformed `[V_A1 | W_A1]`, the degrees-of-freedom
    /// adjustment downstream.
    v_rank_adjusted: usize,
}

impl TransformMatrix {
    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn order(&self) -> usize {
        self.q_order
    }

    pub fn trace(&self) -> f64 {
        self.trace_m
    }

    pub fn rank_adjusted(&self) -> usize {
        self.v_rank_adjusted
    }

    pub fn diag(&self) -> &Array1<f64> {
        &self.diag
    }

    /// `M v`.
    pub fn apply(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        match &self.repr {
            TmRepr::Smoother { omega, k } => {
                let ov = omega.dot(v);
                let kv = k.dot(v);
                omega.t().dot(&ov) - k.t().dot(&kv)
            }
            TmRepr::Projector { qb, s } => {
                let c = qb.t().dot(v);
                qb.dot(&s.dot(&c))
            }
        }
    }

    /// `aᵀ M b`.
    pub fn quad(&self, a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
        match &self.repr {
            TmRepr::Smoother { omega, k } => {
                omega.dot(a).dot(&omega.dot(b)) - k.dot(a).dot(&k.dot(b))
            }
            TmRepr::Projector { qb, s } => {
                let ca = qb.t().dot(a);
                let cb = qb.t().dot(b);
                ca.dot(&s.dot(&cb))
            }
        }
    }

    /// `Tr(M²)`; cubic in `n1` for dense smoothers, cheap for projectors.
    /// Diagnostics and tests only.
    pub fn trace_m2(&self) -> f64 {
        match &self.repr {
            TmRepr::Smoother { .. } => {
                let m = self.materialize();
                m.iter().map(|v| v * v).sum()
            }
            TmRepr::Projector { s, .. } => s.iter().map(|v| v * v).sum(),
        }
    }

    /// Dense `n1 x n1` form; diagnostics and tests only.
    pub fn materialize(&self) -> Array2<f64> {
        match &self.repr {
            TmRepr::Smoother { omega, k } => {
                omega.t().dot(omega.as_ref()) - k.t().dot(k)
            }
            TmRepr::Projector { qb, s } => qb.dot(&s.dot(&qb.t())),
        }
    }
}

/// Build `M(V)` from a weighting matrix and the A1 rows of `V` and `W`.
pub fn transform_matrix(
    omega: &WeightMatrix,
    v: &ViolationBasis,
    w: &CovariateBasis,
    split: &SplitIndex,
) -> Result<TransformMatrix> {
    let v_a1 = v.rows(&split.a1);
    let w_a1 = w.rows(&split.a1);
    let n1 = split.n1();
    if omega.n() != n1 {
        return Err(TsciError::Dimension(format!(
            "weight matrix acts on {} rows but the split has {} estimation rows",
            omega.n(),
            n1
        )));
    }

    let mut joint = Array2::zeros((n1, v_a1.ncols() + w_a1.ncols()));
    joint.slice_mut(s![.., ..v_a1.ncols()]).assign(&v_a1);
    joint.slice_mut(s![.., v_a1.ncols()..]).assign(&w_a1);
    let v_rank_adjusted = svd_rank(&joint.view());
    if v_rank_adjusted >= n1 {
        return Err(TsciError::DegenerateProjection(
            "adjusted span covers all estimation rows".into(),
        ));
    }

    match omega.repr() {
        WeightRepr::Dense(om) => {
            // transformed span
            let hat = om.dot(&joint);
            let g = orthonormal_basis(&hat.view());
            let k = g.t().dot(om.as_ref());
            let omega_fro_sq: f64 = om.iter().map(|x| x * x).sum();
            let k_fro_sq: f64 = k.iter().map(|x| x * x).sum();
            let trace_m = omega_fro_sq - k_fro_sq;
            let mut diag = Array1::zeros(n1);
            for i in 0..n1 {
                let oc: f64 = om.column(i).iter().map(|x| x * x).sum();
                let kc: f64 = k.column(i).iter().map(|x| x * x).sum();
                diag[i] = oc - kc;
            }
            Ok(TransformMatrix {
                repr: TmRepr::Smoother {
                    omega: Arc::clone(om),
                    k,
                },
                kind: omega.kind(),
                n1,
                q_order: v.q,
                trace_m,
                diag,
                v_rank_adjusted,
            })
        }
        WeightRepr::Projector(qb) => {
            // everything happens inside the span of qb
            let coords = qb.t().dot(&joint);
            let g_small = orthonormal_basis(&coords.view());
            let rb = qb.ncols();
            let mut s_mat = Array2::eye(rb);
            if g_small.ncols() > 0 {
                s_mat -= &g_small.dot(&g_small.t());
            }
            let trace_m = rb as f64 - g_small.ncols() as f64;
            let qbs = qb.dot(&s_mat);
            let mut diag = Array1::zeros(n1);
            for i in 0..n1 {
                diag[i] = qb.row(i).dot(&qbs.row(i));
            }
            Ok(TransformMatrix {
                repr: TmRepr::Projector {
                    qb: Arc::clone(qb),
                    s: s_mat,
                },
                kind: omega.kind(),
                n1,
                q_order: v.q,
                trace_m,
                diag,
                v_rank_adjusted,
            })
        }
    }
}

/// Quadratic forms of many perturbation vectors against several transforms
/// built from the same smoother: for each transform and each column `u` of
/// `delta`, `uᵀ M u` and `f_hatᵀ M u`. The smoother product is computed once
/// and shared, which is what makes the bootstrap tests cheap.
pub struct BatchQuad {
    pub quad_self: Vec<f64>,
    pub cross_f: Vec<f64>,
}

pub fn batch_quadratics(
    transforms: &[&TransformMatrix],
    f_hat: &ArrayView1<f64>,
    delta: &ArrayView2<f64>,
) -> Vec<BatchQuad> {
    let l = delta.ncols();
    let mut shared_dense: Option<(*const f64, Array2<f64>, Array1<f64>)> = None;
    let mut shared_proj: Option<(*const f64, Array2<f64>, Array1<f64>)> = None;

    transforms
        .iter()
        .map(|tm| match &tm.repr {
            TmRepr::Smoother { omega, k } => {
                let ptr = omega.as_ptr();
                if shared_dense.as_ref().map(|(p, _, _)| *p) != Some(ptr) {
                    shared_dense = Some((ptr, omega.dot(delta), omega.dot(f_hat)));
                }
                let (_, od, of) = shared_dense.as_ref().unwrap();
                let kd = k.dot(delta);
                let kf = k.dot(f_hat);
                let mut quad_self = Vec::with_capacity(l);
                let mut cross_f = Vec::with_capacity(l);
                for col in 0..l {
                    let odc = od.column(col);
                    let kdc = kd.column(col);
                    quad_self.push(odc.dot(&odc) - kdc.dot(&kdc));
                    cross_f.push(of.dot(&odc) - kf.dot(&kdc));
                }
                BatchQuad { quad_self, cross_f }
            }
            TmRepr::Projector { qb, s } => {
                let ptr = qb.as_ptr();
                if shared_proj.as_ref().map(|(p, _, _)| *p) != Some(ptr) {
                    shared_proj = Some((ptr, qb.t().dot(delta), qb.t().dot(f_hat)));
                }
                let (_, c, qf) = shared_proj.as_ref().unwrap();
                let sc = s.dot(c);
                let sqf = s.dot(qf);
                let mut quad_self = Vec::with_capacity(l);
                let mut cross_f = Vec::with_capacity(l);
                for col in 0..l {
                    quad_self.push(c.column(col).dot(&sc.column(col)));
                    cross_f.push(sqf.dot(&c.column(col)));
                }
                BatchQuad { quad_self, cross_f }
            }
        })
        .collect()
}
