//! Geometric phases of open two-level and few-level systems from
//! quantum-jump trajectories.
//!
//! The crate unravels a Lindblad master equation into pure-state
//! trajectories, evaluates Pancharatnam phases along them and checks the
//! results against a direct density-matrix integration.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod linalg;
pub mod master;
pub mod model;
pub mod phase;
pub mod spin;
pub mod trajectory;
