//! Collaborative memory network (CM-Net) for joint slot filling and intent
//! detection, built on a small reverse-mode autodiff engine.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod crf;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
