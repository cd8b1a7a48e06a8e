//! Entity embeddings for hierarchical categorical variables and a top-down
//! clustering that reduces the number of levels and classes of the hierarchy.
//!
//! The usual flow is [`nnet::train`] on a [`dataset::Dataset`], aggregation of
//! the leaf embeddings with [`embedding::aggregate_up`], [`reducer::reduce`]
//! at a silhouette threshold, and a GLM comparison with [`glm::GroupedModel`].

pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod embedding;
pub mod experiment;
pub mod glm;
pub mod hierarchy;
pub mod nnet;
pub mod pipeline;
pub mod reducer;
pub mod seed;
pub mod simgen;
