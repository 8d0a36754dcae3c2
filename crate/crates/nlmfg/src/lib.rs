//! Solver for one-dimensional mean field games driven by jump diffusions:
//! a dual semi-Lagrangian discretization of the backward Hamilton-Jacobi-
//! Bellman equation and the forward Fokker-Planck equation, coupled through
//! a damped fixed-point iteration, plus a Monte-Carlo cross-validation
//! harness and convergence-study tooling.

pub mod config;
pub mod control;
pub mod coupler;
pub mod error;
pub mod fpk;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod levy;
pub mod mc;
pub mod metrics;
pub mod par;
pub mod quad;

pub use error::{MfgError, Result};
