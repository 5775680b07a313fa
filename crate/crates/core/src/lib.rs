//! Simulation and verification laboratory for products of i.i.d. positive
//! random matrices.
//!
//! The crate simulates the Markov walk `S_n = log |g_n ... g_1 x|` on the
//! positive cone together with its exit time from the half line, estimates
//! the quantities the conditioned limit theorems depend on (Lyapunov
//! exponent, asymptotic variance, invariant measure, harmonic functions,
//! the Poisson solution of the transfer operator), evaluates the analytic
//! heat-kernel main terms, and compares the two in reproducible reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod quadrature;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod walk;

pub use ensemble::{EnsembleSpec, MatrixLaw};
pub use error::{Error, Result};
pub use geometry::{hilbert_metric, Direction, PositiveMatrix};
pub use rng::RandomStream;
pub use walk::{batch, Collector, DrawRecord, SimulationPlan, TrajectoryOutcome};
