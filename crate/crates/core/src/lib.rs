//! Two-stage distribution regression.
//!
//! Bags of points are embedded into the RKHS of a base kernel through their
//! empirical mean embeddings; a second-level kernel on those embeddings
//! carries a multi-penalty regularized least-squares estimator. Training can
//! be split across simulated machines whose local estimators are averaged.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernel`] | base and embedding kernels, Hölder probe |
//! | [`embedding`] | bags, embedding inner products and distances, feature engine |
//! | [`solver`] | Gram and penalty matrices, fitting, prediction, parameter schedules |
//! | [`distributed`] | partitions, divide-and-conquer fitting and averaging |
//! | [`analysis`] | effective dimension, rate fits, operator-norm batteries |
//! | [`harness`] | synthetic data, experiments, file formats |

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod distributed;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod solver;

pub use embedding::{embed_dist, embed_inner, Bag, Engine};
pub use error::{Error, Result};
pub use kernel::{BaseKernelFamily, BaseKernelSpec, EmbeddingKernelFamily, EmbeddingKernelSpec};
pub use solver::{fit, Model, PenaltySpec, Predictor, TwoStageDataset};
