//! fedmesh — a deterministic simulator of peer-to-peer federated learning
//! over dynamic device networks.
//!
//! Devices hold non-i.i.d. shards of a classification dataset, train local
//! models, and each round decide — per peer, under a bandwidth budget —
//! whether to exchange full models, partial (backbone-frozen) models, raw
//! data samples, or synthetic samples drawn from a local generator.
//!
//! The crate is organised around the simulation pipeline:
//!
//! - [`graph`]: dynamic peer topology, trust edges, churn, k-hop BFS discovery
//! - [`cost`]: device capability and communication cost model, packet sizing
//! - [`partition`]: dataset generation/ingestion and i.i.d. / skewed sharding
//! - [`learner`]: softmax/tanh learner, FedAvg aggregation, synthetic generator
//! - [`engine`]: per-round action ranking and greedy budgeted selection
//! - [`sim`]: round-driven orchestration and convergence detection
//! - [`metrics`]: per-round per-client logs, CSV/JSON export
//! - [`config`]: scenario configuration, validation, presets
//! - [`compare`]: cross-run strategy comparison reports
//!
//! Every stochastic choice is driven by a `ChaCha8` stream derived from the
//! scenario seed, so identical configurations reproduce byte-identical logs.

pub mod compare;
pub mod config;
pub mod cost;
pub mod engine;
pub mod error;
pub mod graph;
pub mod learner;
pub mod metrics;
pub mod numerics;
pub mod partition;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use graph::ClientId;
