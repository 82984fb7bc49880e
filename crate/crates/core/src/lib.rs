//! Particle simulation and numerical verification toolkit for
//! `(2, beta)`-superprocesses: measure-valued branching processes with
//! Brownian motion and stable branching mechanism `v^{1+beta}`.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod cluster;
pub mod engine;
pub mod error;
pub mod hitting;
pub mod measure;
pub mod neighborhood;
pub mod offspring;
pub mod pde;
pub mod rng;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
