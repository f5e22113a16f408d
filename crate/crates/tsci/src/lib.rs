//! Two stage curvature identification (TSCI): treatment-effect inference
//! that stays valid when instruments violate the exclusion restriction.
//!
//! The treatment model is fitted by a machine-learning first stage (random
//! forests, L2 boosting, or a polynomial basis projector), expressed as a
//! weighting matrix over the estimation subsample. The second stage projects
//! the smoothed data off a violation space, corrects the overfitting bias of
//! the first stage, and reports bias-corrected confidence intervals. A
//! generalized IV-strength bootstrap test bounds how large a violation space
//! can be adjusted, and a layered comparison test selects the space; multiple
//! sample splits aggregate into a median or multi-split interval.
//!
//! Reproducibility: all randomness flows through ChaCha12 streams derived
//! from user seeds (see [`rng`]); standard-normal draws use the ziggurat
//! sampler; the normal CDF is a Cody rational-approximation erfc and the
//! quantile an Acklam approximation with a Halley refinement (see [`norm`]).

pub mod aggregate;
pub mod basis;
pub mod boost;
pub mod data;
pub mod error;
pub mod estimator;
pub mod forest;
pub mod linalg;
pub mod norm;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod strength;
pub mod violation;
pub mod weights;

pub use data::{build_w, load_dataset, save_dataset, ColumnSpec, CovariateBasis, Dataset, SplitIndex, WMode};
pub use error::{Result, TsciError};
pub use estimator::TsciFit;
pub use pipeline::{FirstStage, MultiSplitOutcome, SplitOutcome, TsciOptions};
pub use selection::SelectionReport;
pub use strength::StrengthResult;
pub use violation::{TransformMatrix, ViolationBasis, ViolationChain};
pub use weights::{WeightKind, WeightMatrix};
