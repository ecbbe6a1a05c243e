//! Integrity fingerprints for graph convolutional models served behind a
//! prediction-only API.
//!
//! The crate covers the whole loop: training a two-layer GCN, choosing or
//! constructing fingerprint queries (transductive node ids or inductive
//! fingerprint graphs), tampering with the served model (exponent bit flips,
//! poisoned replacements, an adaptive attacker that answers suspected
//! fingerprints honestly), and verifying the served model by comparing its
//! labels with the recorded ones.

pub mod attacks;
pub mod error;
pub mod fingerprint;
pub mod gcn;
pub mod graph;
pub mod harness;
pub mod hash;
pub mod serving;

pub use error::{Error, Result};
pub use fingerprint::{Fingerprint, FingerprintMethod, ScoreTable};
pub use gcn::{Model, Params, Posteriors, TrainConfig};
pub use graph::{Features, Graph, GraphDelta, NormalizedAdjacency};
