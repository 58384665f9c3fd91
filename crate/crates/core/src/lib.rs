//! Deterministic federated-learning simulator.
//!
//! The crate implements roughness-regularized federated averaging (RI-FedAvg)
//! next to the FedAvg, FedProx, SCAFFOLD, FedDyn and DP-FedAvg baselines. The
//! roughness index of a loss landscape is also exposed on its own, so it can be
//! used as a standalone analysis tool.
//!
//! Module map:
//!
//! - [`model`]: flat parameter vectors, small differentiable classifiers and a
//!   finite-difference gradient oracle.
//! - [`roughness`]: random-direction loss profiles, discrete total variation and
//!   the roughness index.
//! - [`data`] and [`idx`]: datasets, Dirichlet non-IID partitioning, batching and
//!   MNIST IDX ingestion.
//! - [`fed`]: client sampling, per-algorithm local updates and server aggregation.
//! - [`harness`]: the round loop, metrics and multi-seed replication.
//! - [`report`]: byte-stable CSV rendering of the harness outputs.
//!
//! Every random draw is taken from a stream derived from a single master seed
//! (see [`seed`]), so identical configurations produce identical outputs
//! regardless of how many threads run the clients.

pub mod data;
pub mod error;
pub mod fed;
pub mod harness;
pub mod idx;
pub mod model;
pub mod report;
pub mod roughness;
pub mod seed;

pub use error::{Error, Result};
