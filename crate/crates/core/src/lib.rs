//! Average treatment effect in the treated on restricted mean survival time
//! under stratified case-cohort sampling, with template matching and a
//! simulation engine.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod ccsample;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fixture;
pub mod matching;
pub mod pipeline;
pub mod propensity;
pub mod report;
pub mod rng;
pub mod simgen;
pub mod stats;
pub mod survival;

pub use error::{Error, Result};
