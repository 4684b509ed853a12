//! Retrieval-augmented classification on precomputed embeddings.
//!
//! The pipeline: a key/value [`store::MemoryStore`], top-k cosine retrieval
//! ([`ann`]), a fusion module that mixes retrieved values into the query
//! embedding ([`fusion`]), and a classifier trained on long-tailed data
//! ([`train`]). [`datagen`] produces synthetic benchmarks for all of it.

mod binio;
pub mod ann;
pub mod datagen;
pub mod error;
pub mod fusion;
pub mod nn;
pub mod store;
pub mod train;

pub use error::{Error, Result};
pub use store::{MemoryStore, MetaRecord};
