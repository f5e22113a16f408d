//! Dataset representation, CSV ingestion, covariate basis, and sample split.

use crate::error::{Result, TsciError};
use crate::linalg::svd_rank;
use crate::rng::stream_rng;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use std::path::Path;

/// Outcome, treatment, instruments, and baseline covariates with a shared
/// row count. All entries are finite by construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub d: Array1<f64>,
    pub z: Array2<f64>,
    pub x: Array2<f64>,
}

impl Dataset {
    pub fn new(y: Array1<f64>, d: Array1<f64>, z: Array2<f64>, x: Array2<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(TsciError::Size("dataset must have at least one row".into()));
        }
        if d.len() != n || z.nrows() != n || x.nrows() != n {
            return Err(TsciError::Dimension(format!(
                "row counts differ: y={} d={} z={} x={}",
                n,
                d.len(),
                z.nrows(),
                x.nrows()
            )));
        }
        for (name, it) in [
            ("y", y.iter().collect::<Vec<_>>()),
            ("d", d.iter().collect::<Vec<_>>()),
            ("z", z.iter().collect::<Vec<_>>()),
            ("x", x.iter().collect::<Vec<_>>()),
        ] {
            if it.iter().any(|v| !v.is_finite()) {
                return Err(TsciError::Data {
                    row: 0,
                    column: name.to_string(),
                    message: "non-finite entry".into(),
                });
            }
        }
        Ok(Self { y, d, z, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    /// Instruments and covariates side by side, the feature matrix seen by
    /// first-stage learners.
    pub fn features(&self) -> Array2<f64> {
        let n = self.n();
        let mut c = Array2::zeros((n, self.p_z() + self.p_x()));
        c.slice_mut(s![.., ..self.p_z()]).assign(&self.z);
        c.slice_mut(s![.., self.p_z()..]).assign(&self.x);
        c
    }
}

/// Which named columns of a CSV file play which role.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub y: String,
    pub d: String,
    pub z: Vec<String>,
    pub x: Vec<String>,
}

/// Load a dataset from a headered CSV file.
///
/// Cells must parse as finite reals; the error carries the offending row and
/// column. Data rows are numbered from 1 (the header is row 0).
pub fn load_dataset(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TsciError::Schema(format!("missing column '{name}'")))
    };

    let iy = find(&spec.y)?;
    let id = find(&spec.d)?;
    let iz: Vec<usize> = spec.z.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let ix: Vec<usize> = spec.x.iter().map(|c| find(c)).collect::<Result<_>>()?;
    if iz.is_empty() {
        return Err(TsciError::Schema("at least one instrument column required".into()));
    }

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut z = Vec::new();
    let mut x = Vec::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let parsed: f64 = raw.parse().map_err(|_| TsciError::Data {
                row,
                column: headers[col].clone(),
                message: format!("cannot parse '{raw}' as a real number"),
            })?;
            if !parsed.is_finite() {
                return Err(TsciError::Data {
                    row,
                    column: headers[col].clone(),
                    message: format!("non-finite value '{raw}'"),
                });
            }
            Ok(parsed)
        };
        y.push(cell(iy)?);
        d.push(cell(id)?);
        for &c in &iz {
            z.push(cell(c)?);
        }
        for &c in &ix {
            x.push(cell(c)?);
        }
    }

    let n = y.len();
    if n == 0 {
        return Err(TsciError::Size("CSV contains no data rows".into()));
    }
    let z = Array2::from_shape_vec((n, iz.len()), z)
        .map_err(|e| TsciError::Dimension(e.to_string()))?;
    let x = Array2::from_shape_vec((n, ix.len()), x)
        .map_err(|e| TsciError::Dimension(e.to_string()))?;
    Dataset::new(Array1::from(y), Array1::from(d), z, x)
}

/// Write a dataset back to CSV with enough digits to round-trip exactly.
pub fn save_dataset(dataset: &Dataset, spec: &ColumnSpec, path: &Path) -> Result<()> {
    if spec.z.len() != dataset.p_z() || spec.x.len() != dataset.p_x() {
        return Err(TsciError::Schema(
            "column spec does not match dataset shape".into(),
        ));
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![spec.y.clone(), spec.d.clone()];
    header.extend(spec.z.iter().cloned());
    header.extend(spec.x.iter().cloned());
    writer.write_record(&header)?;
    // 17 significant digits guarantee bit-identical f64 round trips
    let fmt = |v: f64| format!("{:.16e}", v);
    for i in 0..dataset.n() {
        let mut rec = vec![fmt(dataset.y[i]), fmt(dataset.d[i])];
        rec.extend(dataset.z.row(i).iter().map(|&v| fmt(v)));
        rec.extend(dataset.x.row(i).iter().map(|&v| fmt(v)));
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// A 2:1 random split. `a1` carries the second-stage rows, `a2` the rows the
/// first-stage learner is fitted on.
#[derive(Debug, Clone)]
pub struct SplitIndex {
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
    pub seed: u64,
}

impl SplitIndex {
    pub fn n1(&self) -> usize {
        self.a1.len()
    }

    pub fn n2(&self) -> usize {
        self.a2.len()
    }

    /// Identity split: every row in `a1`, nothing held out. Used by first
    /// stages that do not require sample splitting.
    pub fn full(n: usize) -> Self {
        Self {
            a1: (0..n).collect(),
            a2: Vec::new(),
            seed: 0,
        }
    }
}

/// Uniformly random partition with `|a1| = floor(2n/3)`, deterministic in the
/// seed.
pub fn split_sample(n: usize, seed: u64) -> Result<SplitIndex> {
    if n < 3 {
        return Err(TsciError::Size(format!("need n >= 3 to split, got {n}")));
    }
    let n1 = (2 * n) / 3;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0x53504c4954); // "SPLIT" stream

    idx.shuffle(&mut rng);
    let mut a1: Vec<usize> = idx[..n1].to_vec();
    let mut a2: Vec<usize> = idx[n1..].to_vec();
    a1.sort_unstable();
    a2.sort_unstable();
    Ok(SplitIndex { a1, a2, seed })
}

/// How the covariate basis `W` is expanded from `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WMode {
    /// `W = [1 | X]`
    Linear,
    /// `W = [1 | per-coordinate polynomials of X up to this degree]`
    Basis(usize),
}

/// Covariate basis with a leading constant column; the computed column rank
/// rides along for downstream degrees-of-freedom corrections.
#[derive(Debug, Clone)]
pub struct CovariateBasis {
    pub w: Array2<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

impl CovariateBasis {
    pub fn p_w(&self) -> usize {
        self.w.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        select_rows(&self.w.view(), idx)
    }
}

/// Build `W` from `X` per the requested mode. A rank-deficient result (for
/// example a constant X column in basis mode) is flagged, not fatal.
pub fn build_w(x: &ArrayView2<f64>, mode: WMode) -> Result<CovariateBasis> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TsciError::Data {
            row: 0,
            column: "x".into(),
            message: "non-finite covariate".into(),
        });
    }
    let n = x.nrows();
    let w = match mode {
        WMode::Linear => {
            let mut w = Array2::zeros((n, 1 + x.ncols()));
            w.column_mut(0).fill(1.0);
            w.slice_mut(s![.., 1..]).assign(x);
            w
        }
        WMode::Basis(k) => {
            if k == 0 {
                return Err(TsciError::Config("basis degree must be >= 1".into()));
            }
            let mut w = Array2::zeros((n, 1 + k * x.ncols()));
            w.column_mut(0).fill(1.0);
            let mut col = 1;
            for j in 0..x.ncols() {
                for deg in 1..=k {
                    let src = x.column(j);
                    w.column_mut(col)
                        .iter_mut()
                        .zip(src.iter())
                        .for_each(|(dst, &v)| *dst = v.powi(deg as i32));
                    col += 1;
                }
            }
            w
        }
    };
    let rank = svd_rank(&w.view());
    let rank_deficient = rank < w.ncols();
    Ok(CovariateBasis {
        w,
        rank,
        rank_deficient,
    })
}

/// Gather rows of a matrix by index.
pub fn select_rows(m: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

/// Gather entries of a vector by index.
pub fn select_entries(v: &ndarray::ArrayView1<f64>, idx: &[usize]) -> Array1<f64> {
    Array1::from_iter(idx.iter().map(|&i| v[i]))
}
