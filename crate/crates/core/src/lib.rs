//! Source-free continual unsupervised domain adaptation.
//!
//! A source-trained classifier is adapted to a target domain that arrives in
//! small i.i.d. batches. Each batch is merged with a class-balanced replay
//! buffer, pseudo-labeled by two-round cosine clustering, mixed up, and used to
//! minimize entropy + equal-diversity + mixup cross-entropy over the feature
//! generator while the classifier head stays frozen.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptation;
pub mod buffer;
pub mod clustering;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod netcore;
pub mod seed;

pub use error::{Error, Result};
pub use matrix::Matrix;
