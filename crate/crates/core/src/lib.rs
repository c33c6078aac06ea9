// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod env;
pub mod error;
pub mod mlp;
pub mod rollout;
pub mod run;
pub mod seeds;
pub mod umbrella;
pub mod vi;

pub use error::{Error, Result};
