//! Automated feature transformation with three cooperating policies.
//!
//! A head-feature policy, an operation policy and a tail-feature policy
//! build new features by crossing existing ones. They are trained with a
//! sequential clipped policy update around one shared critic whose input
//! is a fixed 98-dim encoding of the variable-size feature pool.
//!
//! Module map:
//!
//! - [`data_io`]: CSV ingestion, run configuration, train/test split
//! - [`feature_space`]: operations, provenance names, validity masks, the pool
//! - [`measures`]: mutual information, redundancy/relevance, metrics
//! - [`downstream`]: random forest / ridge / kNN scoring with k-fold CV
//! - [`state_encoding`]: descriptors and the two-branch critic state
//! - [`nn`]: dense layers, attention blocks, explicit backward, Adam
//! - [`agents`]: the three policies and the value network
//! - [`happo`]: GAE, advantage decomposition, sequential updates
//! - [`harness`]: episode loop, baselines, reports

pub mod agents;
pub mod data_io;
pub mod downstream;
pub mod error;
pub mod exec;
pub mod feature_space;
pub mod happo;
pub mod harness;
pub mod measures;
pub mod nn;
pub mod state_encoding;

pub use error::{Error, Result};
