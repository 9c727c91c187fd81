//! Risk-constrained procedure support: interface graph, procedure
//! compilation, timing and cognitive-failure estimation, a Bayesian safety
//! gate, event detection and an auditable approval runtime.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod audit;
pub mod bayes;
pub mod gate;
pub mod iekg;
pub mod perception;
pub mod procedure;
pub mod replay;
pub mod risk;
pub mod runtime;
pub mod scenario;
pub mod twin;
