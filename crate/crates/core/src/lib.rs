//! Freezing-of-gait detection from lower-back accelerometry.
//!
//! Recordings are parsed and labelled ([`ingest`]), cut into 4 s windows
//! ([`windowing`]), turned into GASF images ([`gaf`]) and classified by a
//! multi-branch CNN trained centrally ([`model`]) or with federated
//! averaging ([`federated`]). [`eval`] scores predictions and runs
//! channel-fallback inference.

pub mod archive;
pub mod channel;
pub mod dataset;
pub mod eval;
pub mod federated;
pub mod gaf;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod weights;
pub mod windowing;

pub use channel::{Channel, PerChannel};
