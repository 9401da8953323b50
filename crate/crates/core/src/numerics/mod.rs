//! Numerical substrate: dense matrices, reverse-mode gradients, optimisers,
//! a symmetric eigensolver and k-means.

pub mod eig;
pub mod kmeans;
mod matrix;
pub mod optim;
pub mod tape;

pub use eig::{sym_eig, EigenPairs, Which};
pub use kmeans::{kmeans, KMeansResult};
pub use matrix::Matrix;
pub use optim::{AdamState, Optimizer, OptimizerKind, SgdState};
pub use tape::{activate, softmax_stable, Activation, Gradients, Tape, Var};
