//! Attentive multi-view deep subspace clustering.
//!
//! Per-view autoencoders (optionally with shortcut connections) embed each
//! view into a shared latent size; a consistent attentive layer and a global
//! attentive layer fuse the embeddings into one joint representation `Z`; a
//! self-expressive layer learns `C` with `Z ≈ Z·C`; spectral clustering on
//! `(|C| + |Cᵀ|)/2` yields the partition.
//!
//! Modules, bottom-up: [`numerics`], [`data`], [`model`], [`training`],
//! [`clustering`], [`metrics`].

pub mod clustering;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{CheckpointError, DataError, Error, ErrorClass, Result};
