//! Derivative-free training of two-layer networks.
//!
//! The crate provides consensus-based optimization (CBO) over flat parameter
//! vectors, an Adam baseline, a hybrid of the two, a multi-task CBO variant,
//! and an optimal-transport formulation of CBO in which every particle is an
//! empirical measure over neurons and the consensus point is a Wasserstein
//! barycenter. The [`harness`] module wires these into reproducible
//! experiments and [`verify`] runs the numerical self-checks.

pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod mnist;
pub mod nn;
pub mod optim;
pub mod ot;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use nn::{EmpiricalMeasure, LossKind, NetworkShape, ParamVector};
