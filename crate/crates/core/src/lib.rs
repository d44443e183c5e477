//! Model merging with data-free Fisher weighting and Bayesian optimization of
//! the merging coefficients, scaled to small synthetic classifiers.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayesopt;
pub mod checkpoint;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod linalg;
pub mod merge;
pub mod params;
pub mod rng;
pub mod toymodels;

pub use error::{Error, Result};
pub use params::{task_vector, ParamVector, Segment, SegmentLayout};
