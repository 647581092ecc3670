//! Chaotic firing-rate features and confidence-thresholded self-training.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod chaos;
pub mod classifiers;
pub mod data;
pub mod eval;
pub mod features;
pub mod rng;
pub mod selftrain;
