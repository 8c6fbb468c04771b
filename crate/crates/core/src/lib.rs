//! Solvers for transport-economic equilibria.
//!
//! The crate is organised bottom-up:
//!
//! * [`network`]: graphs, edge cost families, shortest paths.
//! * [`assignment`]: Wardrop traffic assignment (Frank–Wolfe on the Beckmann
//!   potential), its conjugate dual, the stochastic (Logit) equilibrium and the
//!   hard-capacity LP limit.
//! * [`distribution`]: trip distribution, both the potential game and the
//!   margin-constrained entropic saddle, with a Sinkhorn oracle.
//! * [`saddle`]: a block mirror-prox engine for convex-concave saddle problems.
//! * [`market`]: producers, consumers and the transporter priced through a
//!   saddle problem, with Walras residuals.
//! * [`fullmodel`]: the market coupled with the network dual times.
//! * [`dynamics`]: Logit and imitation-Logit population dynamics.
//! * [`cli`]: JSON instance ingestion, command dispatch and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops over
// several parallel arrays read better than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod cli;
pub mod distribution;
pub mod dynamics;
mod error;
pub mod fullmodel;
pub mod market;
pub mod network;
pub mod par;
pub mod saddle;

pub use error::{Error, Result};
