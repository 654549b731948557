//! Alpha-potential game solver for decentralized control of connected and
//! automated vehicles.
//!
//! The crate builds the potential function of an N-player stochastic
//! differential game with pairwise kernel interactions, discretizes it with
//! Euler–Maruyama, and minimizes the Monte Carlo estimate over per-player
//! feed-forward policies with Adam. Gradients come from a reverse-mode tape
//! recorded over the unrolled dynamics.
//!
//! Module map:
//! - [`game_model`]: dynamics, costs, weights, kernels and the closed-form
//!   potential constructions.
//! - [`policy`]: decentralized feed-forward policies and their parameters.
//! - [`diff_engine`]: reverse-mode tape and finite-difference oracle.
//! - [`rollout`]: discretized dynamics and Monte Carlo estimates.
//! - [`trainer`]: Adam minimization of the potential.
//! - [`verification`]: exploitability and potential-identity checks.
//! - [`scenarios`]: reproducible vehicle experiments and artifact output.

pub mod diff_engine;
mod error;
pub mod game_model;
pub mod plot;
pub mod policy;
pub mod rollout;
pub mod scenarios;
pub mod trainer;
pub mod verification;

pub use error::{Error, Result};
pub use game_model::{
    alpha_bound, DynamicsKind, GameSpec, Integrands, InteractionWeights, Kernel, ObstacleCost,
    PlayerCost,
};
pub use policy::{Architecture, PolicyParams};
pub use rollout::{PotentialEstimate, RolloutBatch, TimeGrid};
pub use trainer::{Objective, TrainConfig, TrainReport};
pub use verification::NECertificate;
