// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod centers;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod integrate;
pub mod kernel;
pub mod quadrature;
pub mod sparse;
pub mod system;
pub mod problems;
pub mod setup;
