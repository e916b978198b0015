//! Semantic acoustic word embeddings built on top of pre-computed phonetic
//! embeddings of segmented spoken words.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical core:
//!
//! - [`corpus`]: segmented corpora, context pairs and negative sampling.
//! - [`clustering`]: k-means over phonetic embeddings and soft pseudo-word labels.
//! - [`skipgram`]: a full-softmax skipgram trained on soft label vectors.
//! - [`projection`]: a two-layer projection network trained with a contrastive loss.
//! - [`intrinsic`]: word-similarity evaluation with Spearman correlation.
//! - [`qbe`]: exact and semantic query-by-example search and its metrics.
//! - [`synth`]: a seeded synthetic corpus generator with known semantics.
//! - [`pca`]: two-component PCA for plotting class embeddings.
//!
//! File formats, configuration and the command line live in the `sawe` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod clustering;
pub mod corpus;
mod error;
pub mod intrinsic;
pub mod linalg;
pub mod optim;
pub mod pca;
pub mod projection;
pub mod qbe;
pub mod seed;
pub mod skipgram;
pub mod synth;

pub use error::{Error, Result};
