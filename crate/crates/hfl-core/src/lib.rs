//! Hierarchical federated learning with compressed model aggregation.
//!
//! Clients are grouped into geographic clusters; each cluster elects an
//! energy-aware core client per round. Clients sparsify their trained model
//! layers, project them through a per-cluster random matrix, and send the
//! short projected vectors to the core. The core sums them (aggregation in
//! the compressed domain) and uplinks one vector per layer to the server,
//! which recovers the aggregated sparse layers by basis pursuit and performs
//! dataset-weighted global aggregation.
//!
//! Module map:
//! - [`data`] — synthetic blob generator, IDX loader, IID partitioning
//! - [`nn`] — minimal MLP with softmax/cross-entropy and seeded SGD
//! - [`topology`] — DBSCAN clustering and rotating core-client selection
//! - [`codec`] — magnitude sparsification and random-projection compression
//! - [`recovery`] — ADMM basis pursuit decompression
//! - [`radio`] — Shannon-rate transmission cost model and energy ledger
//! - [`sim`] — round loop, schemes, metrics, experiment runners

pub mod codec;
pub mod data;
pub mod error;
pub mod nn;
pub mod radio;
pub mod recovery;
pub mod seed;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use topology::ClientId;
