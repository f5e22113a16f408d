//! Bagged regression trees and their weighting-matrix representation.
//!
//! Trees are grown on the held-out subsample with greedy SSE splits; the
//! fitted forest is then expressed as a row-stochastic smoother over the
//! estimation subsample, so the first-stage prediction is `omega * d` and
//! never touches the estimation-side treatment values during fitting.

use crate::error::{Result, TsciError};
use crate::rng::stream_rng;
use crate::weights::{WeightKind, WeightMatrix};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct ForestParams {
    /// Number of trees `S`.
    pub num_trees: usize,
    /// Candidate features per split; `None` means `max(1, floor(p/3))`.
    pub mtry: Option<usize>,
    /// Minimum training rows per leaf.
    pub min_leaf: usize,
    /// Bootstrap sample size as a fraction of the training rows, drawn with
    /// replacement.
    pub bootstrap_fraction: f64,
    /// Depth cap; `None` grows until the leaf-size rule stops splitting.
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: 200,
            mtry: None,
            min_leaf: 5,
            bootstrap_fraction: 1.0,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p / 3).max(1)).clamp(1, p)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        id: usize,
    },
}

/// A fitted CART regression tree. Every covariate row maps to exactly one
/// leaf.
#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

impl RegressionTree {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Leaf id of a covariate row.
    pub fn leaf_of(&self, row: &ArrayView1<f64>) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { id } => return *id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Group row indices of `features` by the leaf they fall into.
    pub fn leaf_groups(&self, features: &ArrayView2<f64>) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_leaves];
        for (i, row) in features.rows().into_iter().enumerate() {
            groups[self.leaf_of(&row)].push(i);
        }
        groups
    }

    #[cfg(test)]
    fn stump(feature: usize, threshold: f64) -> Self {
        Self {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { id: 0 },
                Node::Leaf { id: 1 },
            ],
            n_leaves: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
    pub params: ForestParams,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn node_sse(sum: f64, sumsq: f64, n: f64) -> f64 {
    sumsq - sum * sum / n
}

/// Exact greedy scan over midpoints of consecutive distinct values. Ties are
/// broken toward the lowest feature index, then the lowest threshold, by scan
/// order plus strict improvement.
fn best_split(
    features: &ArrayView2<f64>,
    targets: &ArrayView1<f64>,
    rows: &[usize],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total_sum: f64 = rows.iter().map(|&r| targets[r]).sum();
    let total_sumsq: f64 = rows.iter().map(|&r| targets[r] * targets[r]).sum();
    let parent_sse = node_sse(total_sum, total_sumsq, n as f64);
    if parent_sse <= 1e-12 * (total_sumsq.abs() + 1e-300) {
        return None; // pure node
    }

    let mut best: Option<SplitChoice> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in candidates {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (features[[r, feature]], targets[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_sum = 0.0;
        let mut left_sumsq = 0.0;
        for k in 1..n {
            let (v, t) = pairs[k - 1];
            left_sum += t;
            left_sumsq += t * t;
            if k < min_leaf || n - k < min_leaf || v == pairs[k].0 {
                continue;
            }
            let left = node_sse(left_sum, left_sumsq, k as f64);
            let right = node_sse(total_sum - left_sum, total_sumsq - left_sumsq, (n - k) as f64);
            let gain = parent_sse - left - right;
            if gain > best.as_ref().map_or(1e-12 * parent_sse, |b| b.gain) {
                best = Some(SplitChoice {
                    feature,
                    threshold: 0.5 * (v + pairs[k].0),
                    gain,
                });
            }
        }
    }
    best
}

struct GrowRules {
    min_leaf: usize,
    max_depth: Option<usize>,
    mtry: usize,
}

fn grow_node(
    tree: &mut RegressionTree,
    features: &ArrayView2<f64>,
    targets: &ArrayView1<f64>,
    rows: Vec<usize>,
    depth: usize,
    rules: &GrowRules,
    rng: &mut impl Rng,
) -> usize {
    let p = features.ncols();
    let depth_stop = rules.max_depth.is_some_and(|d| depth >= d);
    let choice = if depth_stop {
        None
    } else {
        let mut candidates = rand::seq::index::sample(rng, p, rules.mtry).into_vec();
        candidates.sort_unstable();
        best_split(features, targets, &rows, &candidates, rules.min_leaf)
    };

    match choice {
        None => {
            let id = tree.n_leaves;
            tree.n_leaves += 1;
            tree.nodes.push(Node::Leaf { id });
            tree.nodes.len() - 1
        }
        Some(split) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&r| features[[r, split.feature]] <= split.threshold);
            let at = tree.nodes.len();
            tree.nodes.push(Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: 0,
                right: 0,
            });
            let left = grow_node(tree, features, targets, left_rows, depth + 1, rules, rng);
            let right = grow_node(tree, features, targets, right_rows, depth + 1, rules, rng);
            if let Node::Split {
                left: l, right: r, ..
            } = &mut tree.nodes[at]
            {
                *l = left;
                *r = right;
            }
            at
        }
    }
}

/// Grow one tree on the given rows (no resampling). Shared with the boosting
/// tree base.
pub(crate) fn grow_single_tree(
    features: &ArrayView2<f64>,
    targets: &ArrayView1<f64>,
    rows: Vec<usize>,
    min_leaf: usize,
    max_depth: Option<usize>,
    mtry: usize,
    rng: &mut impl Rng,
) -> RegressionTree {
    let mut tree = RegressionTree {
        nodes: Vec::new(),
        n_leaves: 0,
    };
    let rules = GrowRules {
        min_leaf,
        max_depth,
        mtry,
    };
    grow_node(&mut tree, features, targets, rows, 0, &rules, rng);
    tree
}

/// Fit a bagged forest of `num_trees` CART trees on `(features, d)`.
pub fn fit_forest(
    features: &ArrayView2<f64>,
    d: &ArrayView1<f64>,
    params: &ForestParams,
) -> Result<Forest> {
    let n = features.nrows();
    if n != d.len() {
        return Err(TsciError::Dimension(format!(
            "features have {n} rows but treatment has {}",
            d.len()
        )));
    }
    if n < 2 || n < params.min_leaf {
        return Err(TsciError::Size(format!(
            "training sample of {n} rows is too small for min_leaf {}",
            params.min_leaf
        )));
    }
    if params.num_trees == 0 {
        return Err(TsciError::Config("need at least one tree".into()));
    }
    if !(params.bootstrap_fraction > 0.0 && params.bootstrap_fraction <= 1.0) {
        return Err(TsciError::Config(
            "bootstrap fraction must be in (0, 1]".into(),
        ));
    }
    let mtry = params.mtry_for(features.ncols());
    let n_boot = ((params.bootstrap_fraction * n as f64).ceil() as usize).clamp(1, n);

    let trees: Vec<RegressionTree> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(params.seed, t as u64);
            let rows: Vec<usize> = (0..n_boot).map(|_| rng.random_range(0..n)).collect();
            grow_single_tree(
                features,
                d,
                rows,
                params.min_leaf,
                params.max_depth,
                mtry,
                &mut rng,
            )
        })
        .collect();

    Ok(Forest {
        trees,
        params: params.clone(),
    })
}

fn assemble_weights(forest: &Forest, features: &ArrayView2<f64>, kind: WeightKind) -> WeightMatrix {
    let n1 = features.nrows();
    let s = forest.trees.len() as f64;
    let mut omega = Array2::<f64>::zeros((n1, n1));
    let mut empty_leaf_events = 0usize;

    for tree in &forest.trees {
        let groups = tree.leaf_groups(features);
        for group in &groups {
            if group.is_empty() {
                continue;
            }
            let w = 1.0 / (s * group.len() as f64);
            for &i in group {
                let mut row = omega.row_mut(i);
                for &j in group {
                    row[j] += w;
                }
            }
        }
        // A query row whose leaf holds no estimation-sample member gets a
        // uniform row from this tree. Unreachable when the query rows are the
        // estimation rows themselves, since each row occupies its own leaf.
        let covered: usize = groups.iter().map(|g| g.len()).sum();
        if covered < n1 {
            let u = 1.0 / (s * n1 as f64);
            for (i, row) in features.rows().into_iter().enumerate() {
                if groups[tree.leaf_of(&row)].is_empty() {
                    empty_leaf_events += 1;
                    omega.row_mut(i).iter_mut().for_each(|v| *v += u);
                }
            }
        }
    }

    let mut wm = WeightMatrix::dense(kind, omega);
    wm.empty_leaf_events = empty_leaf_events;
    wm
}

/// Express a fitted forest as a weighting matrix over the given rows:
/// `omega[i, j] = (1/S) sum_s 1[j in leaf_s(i)] / #leaf_s(i)`.
pub fn forest_weights(forest: &Forest, features_a1: &ArrayView2<f64>) -> WeightMatrix {
    assemble_weights(forest, features_a1, WeightKind::Forest)
}

/// No-split variant: train and evaluate on all rows.
pub fn full_sample_weights(
    features: &ArrayView2<f64>,
    d: &ArrayView1<f64>,
    params: &ForestParams,
) -> Result<(Forest, WeightMatrix)> {
    let forest = fit_forest(features, d, params)?;
    let weights = assemble_weights(&forest, features, WeightKind::FullSampleForest);
    Ok((forest, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::row_sums;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn small_params(num_trees: usize, min_leaf: usize) -> ForestParams {
        ForestParams {
            num_trees,
            mtry: Some(1),
            min_leaf,
            bootstrap_fraction: 1.0,
            max_depth: None,
            seed: 42,
        }
    }

    #[test]
    fn constant_target_yields_root_leaves() {
        let features = Array2::from_shape_fn((20, 2), |(i, j)| (i * 3 + j) as f64);
        let d = Array1::from_elem(20, 2.5);
        let forest = fit_forest(&features.view(), &d.view(), &small_params(10, 1)).unwrap();
        assert!(forest.trees.iter().all(|t| t.n_leaves() == 1));
    }

    #[test]
    fn min_leaf_equal_to_sample_size_gives_single_leaf() {
        let features = Array2::from_shape_fn((12, 1), |(i, _)| i as f64);
        let d = Array1::from_shape_fn(12, |i| (i as f64).sin());
        let forest = fit_forest(&features.view(), &d.view(), &small_params(5, 12)).unwrap();
        assert!(forest.trees.iter().all(|t| t.n_leaves() == 1));
    }

    #[test]
    fn too_small_sample_is_rejected() {
        let features = Array2::from_shape_fn((3, 1), |(i, _)| i as f64);
        let d = array![0.0, 1.0, 2.0];
        let params = small_params(1, 5);
        assert!(matches!(
            fit_forest(&features.view(), &d.view(), &params),
            Err(TsciError::Size(_))
        ));
    }

    #[test]
    fn step_function_split_matches_brute_force_scan() {
        // D jumps at z = 0; the root split must separate the plateaus.
        let z: Vec<f64> = (-10..10).map(|i| i as f64 + 0.5).collect();
        let features = Array2::from_shape_vec((20, 1), z.clone()).unwrap();
        let d: Array1<f64> = z.iter().map(|&v| if v < 0.0 { -1.0 } else { 3.0 }).collect();

        let mut params = small_params(1, 1);
        params.bootstrap_fraction = 1.0;
        // full bootstrap may omit boundary points; grow directly on all rows
        let mut rng = stream_rng(7, 0);
        let tree = grow_single_tree(
            &features.view(),
            &d.view(),
            (0..20).collect(),
            1,
            None,
            1,
            &mut rng,
        );
        let root_threshold = match &tree.nodes[0] {
            Node::Split { threshold, .. } => *threshold,
            Node::Leaf { .. } => panic!("expected a split at the root"),
        };

        // independent oracle: scan every midpoint for the SSE-minimizing cut
        let mut sorted = z.clone();
        sorted.sort_by(f64::total_cmp);
        let sse = |vals: &[f64]| -> f64 {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum()
        };
        let mut best = (f64::INFINITY, f64::NAN);
        for k in 1..20 {
            if sorted[k - 1] == sorted[k] {
                continue;
            }
            let thr = 0.5 * (sorted[k - 1] + sorted[k]);
            let left: Vec<f64> = z
                .iter()
                .zip(d.iter())
                .filter(|(v, _)| **v <= thr)
                .map(|(_, t)| *t)
                .collect();
            let right: Vec<f64> = z
                .iter()
                .zip(d.iter())
                .filter(|(v, _)| **v > thr)
                .map(|(_, t)| *t)
                .collect();
            let total = sse(&left) + sse(&right);
            if total < best.0 {
                best = (total, thr);
            }
        }
        assert_abs_diff_eq!(root_threshold, best.1, epsilon = 1e-12);
        assert_abs_diff_eq!(root_threshold, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_leaf_tree_gives_uniform_weights() {
        let forest = Forest {
            trees: vec![RegressionTree {
                nodes: vec![Node::Leaf { id: 0 }],
                n_leaves: 1,
            }],
            params: small_params(1, 1),
        };
        let features = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let omega = forest_weights(&forest, &features.view()).materialize();
        for v in omega.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn stump_partition_gives_leaf_averages() {
        // one tree splitting rows {0,1} from {2,3}
        let forest = Forest {
            trees: vec![RegressionTree::stump(0, 1.5)],
            params: small_params(1, 1),
        };
        let features = array![[0.0], [1.0], [2.0], [3.0]];
        let omega = forest_weights(&forest, &features.view()).materialize();
        assert_eq!(omega.row(0).to_vec(), vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(omega.row(1).to_vec(), vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(omega.row(3).to_vec(), vec![0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn two_tree_average_matches_direct_evaluation() {
        // partitions {0,1}|{2} and {0}|{1,2}; weight row of point 1 is the
        // average of (1/2,1/2,0) and (0,1/2,1/2)
        let forest = Forest {
            trees: vec![RegressionTree::stump(0, 1.5), RegressionTree::stump(0, 0.5)],
            params: small_params(2, 1),
        };
        let features = array![[0.0], [1.0], [2.0]];
        let omega = forest_weights(&forest, &features.view()).materialize();
        let row = omega.row(1);
        assert_abs_diff_eq!(row[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(row[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(row[2], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn rows_are_stochastic_and_nonnegative() {
        let features = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 13) % 19) as f64);
        let d = Array1::from_shape_fn(40, |i| ((i * 5) % 11) as f64);
        let forest = fit_forest(
            &features.view(),
            &d.view(),
            &ForestParams {
                num_trees: 25,
                mtry: Some(2),
                min_leaf: 3,
                ..small_params(25, 3)
            },
        )
        .unwrap();
        let wm = forest_weights(&forest, &features.view());
        let omega = wm.materialize();
        assert!(omega.iter().all(|&v| v >= 0.0));
        for s in row_sums(&omega.view()).iter() {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
        assert_eq!(wm.empty_leaf_events, 0);
    }

    #[test]
    fn full_sample_weights_are_deterministic_and_stochastic() {
        let features = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 3 + j * 5) % 13) as f64);
        let d = Array1::from_shape_fn(30, |i| (i as f64 * 0.7).cos());
        let params = small_params(8, 2);
        let (_, w1) = full_sample_weights(&features.view(), &d.view(), &params).unwrap();
        let (_, w2) = full_sample_weights(&features.view(), &d.view(), &params).unwrap();
        let m1 = w1.materialize();
        assert_eq!(m1, w2.materialize());
        assert_eq!(w1.kind(), WeightKind::FullSampleForest);
        for s in row_sums(&m1.view()).iter() {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn isolating_forest_is_identity_smoother() {
        // fully grown on the evaluation points themselves: every leaf is a
        // singleton, so the smoother is the identity and predictions
        // reproduce the treatment exactly
        let features = Array2::from_shape_fn((9, 1), |(i, _)| i as f64);
        let d = Array1::from_shape_fn(9, |i| (i as f64) * 1.7 - 3.0);
        let mut rng = stream_rng(3, 0);
        let tree = grow_single_tree(
            &features.view(),
            &d.view(),
            (0..9).collect(),
            1,
            None,
            1,
            &mut rng,
        );
        assert_eq!(tree.n_leaves(), 9);
        let forest = Forest {
            trees: vec![tree.clone(), tree],
            params: small_params(2, 1),
        };
        let omega = forest_weights(&forest, &features.view());
        let dense = omega.materialize();
        for i in 0..9 {
            for j in 0..9 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dense[[i, j]], expect, epsilon = 1e-15);
            }
        }
        let f_hat = omega.apply(&d.view());
        for (a, b) in f_hat.iter().zip(d.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn constant_target_full_weights_uniform() {
        let features = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let d = Array1::from_elem(10, 1.0);
        let (_, w) = full_sample_weights(&features.view(), &d.view(), &small_params(4, 2)).unwrap();
        for v in w.materialize().iter() {
            assert_abs_diff_eq!(*v, 0.1, epsilon = 1e-14);
        }
    }
}
