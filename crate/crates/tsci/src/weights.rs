//! First-stage weighting matrices.
//!
//! Every first stage is expressed as a linear smoother acting on the
//! second-stage treatment vector: `f_hat = omega * d`. Forest and boosting
//! smoothers are stored dense; basis smoothers are orthogonal projectors and
//! are stored by an orthonormal span basis instead of an `n x n` matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    Forest,
    Basis,
    Boosting,
    FullSampleForest,
}

#[derive(Debug, Clone)]
pub(crate) enum WeightRepr {
    Dense(Arc<Array2<f64>>),
    /// `omega = q qᵀ` with orthonormal columns in `q`.
    Projector(Arc<Array2<f64>>),
}

/// Linear smoother of a first-stage learner over the second-stage rows.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    kind: WeightKind,
    repr: WeightRepr,
    n: usize,
    /// Trees that hit a leaf with no second-stage member and fell back to
    /// uniform weights; stays zero when weights are evaluated at the
    /// second-stage rows themselves.
    pub empty_leaf_events: usize,
}

impl WeightMatrix {
    pub(crate) fn dense(kind: WeightKind, omega: Array2<f64>) -> Self {
        let n = omega.nrows();
        assert_eq!(n, omega.ncols(), "weight matrix must be square");
        Self {
            kind,
            repr: WeightRepr::Dense(Arc::new(omega)),
            n,
            empty_leaf_events: 0,
        }
    }

    pub(crate) fn projector(kind: WeightKind, q: Array2<f64>) -> Self {
        let n = q.nrows();
        Self {
            kind,
            repr: WeightRepr::Projector(Arc::new(q)),
            n,
            empty_leaf_events: 0,
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    /// Number of rows the smoother acts on.
    pub fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn repr(&self) -> &WeightRepr {
        &self.repr
    }

    /// `omega * v`; with `v = d` this is the first-stage prediction.
    pub fn apply(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        match &self.repr {
            WeightRepr::Dense(m) => m.dot(v),
            WeightRepr::Projector(q) => q.dot(&q.t().dot(v)),
        }
    }

    /// `omega * m` column by column.
    pub fn apply_mat(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        match &self.repr {
            WeightRepr::Dense(w) => w.dot(m),
            WeightRepr::Projector(q) => q.dot(&q.t().dot(m)),
        }
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        match &self.repr {
            WeightRepr::Dense(m) => m.iter().map(|v| v * v).sum(),
            // projector: ||QQᵀ||_F² = rank
            WeightRepr::Projector(q) => q.ncols() as f64,
        }
    }

    /// Dense form; intended for diagnostics, dumps, and tests.
    pub fn materialize(&self) -> Array2<f64> {
        match &self.repr {
            WeightRepr::Dense(m) => m.as_ref().clone(),
            WeightRepr::Projector(q) => q.dot(&q.t()),
        }
    }

    /// Write the dense matrix as row-major CSV for external cross-checks.
    pub fn dump_csv(&self, path: &std::path::Path) -> crate::error::Result<()> {
        let dense = self.materialize();
        let mut writer = csv::Writer::from_path(path)?;
        for row in dense.rows() {
            writer.write_record(row.iter().map(|v| format!("{:.16e}", v)))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Row sums of a dense matrix, used by row-stochasticity checks.
pub fn row_sums(m: &ArrayView2<f64>) -> Array1<f64> {
    m.rows().into_iter().map(|r| r.sum()).collect()
}
