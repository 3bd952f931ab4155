//! Distributed averaging integral frequency control with monotone learned policies.
//!
//! The crate models a lossless power network, evaluates stacked-ReLU
//! controllers whose monotonicity is built into their parameterization,
//! simulates the closed loop, trains the controllers by differentiating
//! through unrolled Euler rollouts, and checks Lyapunov stability conditions
//! numerically along trajectories and over sampled regions.

pub mod controller;
pub mod cost;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod lyapunov;
pub mod training;

pub use error::{Error, Result};
