//! Candidate retrieval with learned retrieval keys.
//!
//! A pre-trained deep recommender scores user interest; an actor network
//! learns to synthesize a per-user key in the item-representation space so
//! that interest is approximated by vector similarity, and candidates come
//! back from a top-K similarity index. The crate also ships two-tower and
//! learning-free baselines plus an evaluation bench over ranking metrics.

pub mod error;
pub mod actor;
pub mod critic;
pub mod data;
pub mod numcore;
pub mod retrieval;
pub mod rng;
pub mod similarity;
pub mod trainer;

pub use error::{RecallError, Result};
