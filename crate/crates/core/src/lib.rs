//! Quadrotor navigation through procedurally generated ducts.
//!
//! The crate is layered bottom-up: [`geom`] builds duct courses, [`dynamics`]
//! integrates the rigid body, [`env`] turns both into a shaped-reward
//! episode, [`nets`] and [`algo`] train PPO and SAC policies against batches
//! of environments, [`eval`] scores checkpoints and [`run`] manages run
//! directories.

// `!(x > 0.0)` is deliberate throughout validation: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algo;
pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod geom;
pub mod nets;
mod numfmt;
pub mod rng;
pub mod run;

pub use numfmt::sig as format_sig;
