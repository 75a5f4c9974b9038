//! Aspect-order tree (AOTree) explainable recommendation.
//!
//! Pipeline: a review corpus with ordered aspect mentions ([`corpus`]) yields
//! user and item aspect-importance matrices ([`aspect_stats`]); one decision
//! tree per side ([`tree`]) groups entities by those importances and the path
//! an entity takes becomes its aspect order. The merged, padded order of an
//! interaction ([`order`]) drives an attention rating predictor ([`model`])
//! trained with Adam ([`train`]). [`eval`] and [`analysis`] implement the
//! rating, ranking, explanation and order-consistency measurements, and
//! [`pipeline`] ties the stages together; [`experiment`] holds the repeated-seed
//! studies.

pub mod analysis;
pub mod aspect_stats;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod order;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
pub use par::Exec;
