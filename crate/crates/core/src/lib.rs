// NaN-rejecting `!(x > 0.0)` guards and full-precision published coefficients are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod alias;
pub mod cli;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod special;
pub mod stats;
pub mod theory;
