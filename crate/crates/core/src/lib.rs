//! Differentially private policy-gradient training.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod config;
pub mod distributions;
pub mod dppg;
pub mod envs;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod policies;
pub mod rng;
pub mod special;
pub mod trust_region;

pub use error::{Error, Result};
