#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod fdiv;
pub mod matrix;
pub mod models;
pub mod moments;
pub mod prob;
pub mod ratio;
pub mod rng;
pub mod scoring;
pub mod trainer;

pub use error::{Error, Result};
