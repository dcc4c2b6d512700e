//! Retrieval routing for retrieval-augmented question answering.
//!
//! A small proxy model answers first. Its heuristic answer decides whether
//! the large reader model needs retrieval at all, and which claims in it
//! point at knowledge the reader is missing. Only those claims are turned
//! into search queries.

pub mod domain;
pub mod eval;
pub mod gateway;
pub mod judgment;
pub mod mock;
pub mod pipeline;
pub mod retrieval;
pub mod rewrite;
pub mod text;

pub use domain::{Document, HeuristicAnswer, Question};
pub use gateway::{Gateway, ModelEndpoint, ModelRole};
pub use pipeline::{Engine, Mode, PipelineConfig, PipelineTrace};
