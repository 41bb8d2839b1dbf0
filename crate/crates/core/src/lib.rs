//! Learned lifted bilinear dynamics and real-time NMPC for a simulated
//! quadrotor.
//!
//! The crate covers the full pipeline:
//!
//! - [`sim`] — 6-DoF rigid-body simulator with thrust mixing, ground effect,
//!   reference trajectories and a PID data-collection controller.
//! - [`dataset`] — data-collection protocol, downsampling and serialization.
//! - [`diffnet`] — encoder network and bilinear output layers with exact
//!   reverse-mode gradients.
//! - [`trainer`] — minibatch training loop and open-loop evaluation.
//! - [`model`] — the learned discrete-time lifted bilinear system.
//! - [`qp`] — embedded ADMM quadratic-program solver.
//! - [`nmpc`] — SQP model-predictive controller (Koopman and nominal).

pub mod dataset;
pub mod diffnet;
pub mod error;
pub mod model;
pub mod nmpc;
pub mod nominal;
pub mod qp;
pub mod sim;
pub mod trainer;

pub use error::{CoreError, Result};
