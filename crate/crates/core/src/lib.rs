//! Graph neural network recommender over a bipartite user–item graph.
//!
//! Pipeline: [`graph`] parses ratings into an [`graph::InteractionGraph`],
//! [`sampler`] picks important neighbours, [`model`] propagates attention- or
//! pooling-aggregated messages over the sampled graph, [`trainer`] fits it
//! with a cross-entropy objective, [`bpr`] provides the matrix-factorisation
//! baseline and [`eval`] scores both with AUC and NDCG@k.

pub mod bpr;
pub mod eval;
pub mod graph;
pub mod model;
pub mod numeric;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod snapshot;
pub mod trainer;
