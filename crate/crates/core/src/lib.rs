//! Principal word vectors.
//!
//! The crate builds word embeddings in three stages:
//!
//! 1. [`corpus`] and [`features`] turn raw or CoNLL-U text into an indexed
//!    token stream and a set of feature variables (word forms, POS tags or
//!    their joint pairs seen through neighbourhood or dependency contexts).
//! 2. [`coocmat`] scans the corpus into a sparse feature-by-word contextual
//!    matrix, optionally combined over window offsets or stacked across
//!    feature sets.
//! 3. [`gpca`] runs a generalized PCA over that matrix: diagonal metric and
//!    weight scaling, an element-wise [`transform`] (optionally tuned to
//!    maximize entropy), implicit mean centring, a randomized centred SVD from
//!    [`linalg`], and eigenvalue weighting.
//!
//! [`eval`] holds the intrinsic metrics used to compare embeddings, and
//! [`config`] the `key = value` run configuration shared by the command line
//! tool and the browser demo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coocmat;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod gpca;
pub mod linalg;
pub mod par;
pub mod transform;

mod error;

pub use error::{Error, Result};
