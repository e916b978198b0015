//! File formats and the batch command line for semantic acoustic word
//! embeddings. The algorithms live in [`sawe_core`].

pub mod binary;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod store;
pub mod tables;

pub use sawe_core as core;
