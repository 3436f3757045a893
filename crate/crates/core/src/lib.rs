//! Graph neural network training toolkit: CSR graphs, a reverse-mode tape
//! over sparse and dense kernels, GCN/GraphSAGE/GAT layers, full-batch
//! node classification, and hyperparameter sweeps.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod graph;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
