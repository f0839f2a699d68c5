//! Roller bearing dynamics and a message-passing graph network surrogate.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`simulator`] integrates a 2D ring/roller model under a step load.
//! 2. [`graph`] turns recorded states into graphs with force targets.
//! 3. [`gnn`] holds the encode-process-decode network, its gradients and Adam.
//! 4. [`trainer`] fits the network on one set of roller counts.
//! 5. [`eval`] scores single-step predictions on an unseen roller count and
//!    runs the inner-ring displacement sweep.
//!
//! [`pipeline`] wires the stages together for the command line tool.

pub mod contact;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gnn;
pub mod graph;
pub mod pipeline;
pub mod simulator;
pub mod trainer;
pub mod trajectory_io;

pub use error::{Error, Result};
