//! Expert routing for community question answering.
//!
//! Builds a heterogeneous question/user/tag graph from Q&A records, learns
//! node representations two ways (random-walk skip-gram and a two-layer
//! graph convolution), and ranks candidate answerers for unseen questions.

pub mod endcold;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grad;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod route;
pub mod seq;
pub mod synth;
pub mod textio;
pub mod walkembed;

pub use error::{Error, Result};
