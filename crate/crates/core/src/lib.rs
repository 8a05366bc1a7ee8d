//! Signed graph embeddings with Kolmogorov–Arnold transforms.

pub mod cli;
pub mod eval;
pub mod graphstore;
pub mod kan;
pub mod sgcn;
pub mod tensor;
pub mod train;
