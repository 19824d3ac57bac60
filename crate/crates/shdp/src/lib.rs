//! Nonparametric topic modeling on the unit sphere.
//!
//! Documents are bags of word embeddings normalized to unit length; topics
//! are von Mises-Fisher distributions over that sphere, tied together by a
//! hierarchical Dirichlet process and fit with stochastic variational
//! inference. Topic quality is scored by sliding-window PMI coherence.

pub mod cli;
pub mod coherence;
pub mod corpus;
pub mod directional;
pub mod embeddings;
pub mod error;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod synth;

pub use error::{Error, Result};
