//! Reinforcement learning to rank when the user's preferred display order is
//! unknown.
//!
//! Two Double-DQN agents are provided: a GRU baseline that fills display
//! positions top to bottom, and the Double-Rank Model (DRM) that alternately
//! picks a document and the position to show it in. Rewards are simulated from
//! labelled learning-to-rank data under a hidden display order and evaluated
//! with permuted NDCG (P-NDCG).

pub mod agents;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mdp;
pub mod neural;
pub mod trainer;

pub use error::{Error, Result};
