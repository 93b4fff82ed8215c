//! Metric-learning toolkit built around subspace pooling: a feature map is
//! summarized by the orthonormal basis of its dominant left-singular
//! subspace, and that pooling layer is differentiable, so the whole model
//! trains end to end.
//!
//! The crate provides:
//! - dense linear algebra with a deterministic Jacobi SVD ([`numerics`]),
//! - the pooling layer with its analytic backward pass ([`pooling`]),
//! - identification and batch-hard triplet losses ([`losses`]),
//! - a small trainable conv pipeline with Adam ([`pipeline`]),
//! - a retrieval evaluation harness: mAP, CMC, F-score ([`eval`]),
//! - dataset generation, splitting, and tensor file I/O ([`data`]).

// Dense kernels index matrices directly; iterator rewrites of those loops
// obscure the arithmetic.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod numerics;
pub mod pipeline;
pub mod pooling;
pub mod rng;

pub use error::{Error, Result};
