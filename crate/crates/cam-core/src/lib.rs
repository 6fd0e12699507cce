//! Learned admissibility scoring for multi-agent collision-free navigation.
//!
//! A model assigns a scalar score to a (local observation, action) pair;
//! actions with non-negative score are treated as safe to execute. Scores
//! over large neighborhoods are composed as a min over scores of bounded
//! subgraphs, which keeps a model trained on small scenes usable in denser
//! ones. Training is online: episodes are rolled out with the current
//! model, sparsely labeled by observed collisions, relabeled backwards
//! through time, and fitted with a margin loss on a reverse-mode tape.

pub mod cam;
pub mod checkpoint;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod rng;
pub mod trainer;
pub mod worlds;

pub use error::{CamError, Result};
