// `!(x > 0.0)` is used deliberately throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod envs;
pub mod estimators;
pub mod gaussians;
pub mod optimizer;
pub mod policies;
pub mod quadrature;
pub mod surrogate;
